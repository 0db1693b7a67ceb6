import { applyDiff, revertDiff } from "./grid.js";
import { Grid, GridDiff } from "./types.js";

/** Undo/redo stacks of grid diffs; undo followed by redo is exact. */
export class History {
    private undoStack: GridDiff[] = [];
    private redoStack: GridDiff[] = [];

    push(diff: GridDiff): void {
        if (diff.indices.length === 0) return;
        this.undoStack.push(diff);
        this.redoStack = [];
    }

    undo(grid: Grid): boolean {
        const diff = this.undoStack.pop();
        if (!diff) return false;
        revertDiff(grid, diff);
        this.redoStack.push(diff);
        return true;
    }

    redo(grid: Grid): boolean {
        const diff = this.redoStack.pop();
        if (!diff) return false;
        applyDiff(grid, diff);
        this.undoStack.push(diff);
        return true;
    }

    get canUndo(): boolean {
        return this.undoStack.length > 0;
    }

    get canRedo(): boolean {
        return this.redoStack.length > 0;
    }

    clear(): void {
        this.undoStack = [];
        this.redoStack = [];
    }
}
