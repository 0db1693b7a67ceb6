import { Brush, Grid, GridDiff, Point } from "./types.js";

/** Accumulates first-before/last-after per touched pixel across one stroke. */
class DiffBuilder {
    private firstBefore = new Map<number, number>();
    constructor(private grid: Grid) {}

    set(index: number, value: number): void {
        const prev = this.grid.data[index];
        if (prev === value && !this.firstBefore.has(index)) return;
        if (!this.firstBefore.has(index)) this.firstBefore.set(index, prev);
        this.grid.data[index] = value;
    }

    finish(): GridDiff {
        const indices: number[] = [];
        const before: number[] = [];
        const after: number[] = [];
        for (const [index, prev] of this.firstBefore) {
            const now = this.grid.data[index];
            if (now === prev) continue; // stroke ended where it started
            indices.push(index);
            before.push(prev);
            after.push(now);
        }
        return { indices, before, after };
    }
}

function stampDisc(builder: DiffBuilder, grid: Grid, cx: number, cy: number,
                   radius: number, category: number): void {
    const r = Math.max(0, radius);
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(grid.width - 1, Math.ceil(cx + r));
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(grid.height - 1, Math.ceil(cy + r));
    const r2 = r * r;
    for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
            const dx = x - cx;
            const dy = y - cy;
            if (dx * dx + dy * dy <= r2) builder.set(y * grid.width + x, category);
        }
    }
}

/**
 * Paint every pixel within the brush radius of the polyline onto the grid.
 * Out-of-canvas points clip; a zero-length path stamps one disc. Returns the
 * sparse diff for the undo stack (empty when nothing changed).
 */
export function paintStroke(grid: Grid, path: Point[], brush: Brush): GridDiff {
    if (path.length === 0) return { indices: [], before: [], after: [] };
    if (brush.shape === "fill-bucket") return floodFill(grid, path[0].x, path[0].y, brush.category);
    const builder = new DiffBuilder(grid);
    stampDisc(builder, grid, path[0].x, path[0].y, brush.radius, brush.category);
    for (let i = 1; i < path.length; i++) {
        const a = path[i - 1];
        const b = path[i];
        const dist = Math.hypot(b.x - a.x, b.y - a.y);
        const steps = Math.max(1, Math.ceil(dist * 2)); // half-pixel spacing
        for (let s = 1; s <= steps; s++) {
            const t = s / steps;
            stampDisc(builder, grid, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
                brush.radius, brush.category);
        }
    }
    return builder.finish();
}

/** Recolor the 4-connected region containing (x, y); returns the diff. */
export function floodFill(grid: Grid, x: number, y: number, category: number): GridDiff {
    const startX = Math.round(x);
    const startY = Math.round(y);
    const empty: GridDiff = { indices: [], before: [], after: [] };
    if (startX < 0 || startY < 0 || startX >= grid.width || startY >= grid.height) return empty;
    const source = grid.data[startY * grid.width + startX];
    if (source === category) return empty;
    const builder = new DiffBuilder(grid);
    const stack = [startY * grid.width + startX];
    while (stack.length) {
        const idx = stack.pop()!;
        if (grid.data[idx] !== source) continue;
        builder.set(idx, category);
        const px = idx % grid.width;
        if (px > 0) stack.push(idx - 1);
        if (px < grid.width - 1) stack.push(idx + 1);
        if (idx >= grid.width) stack.push(idx - grid.width);
        if (idx < grid.data.length - grid.width) stack.push(idx + grid.width);
    }
    return builder.finish();
}

export function applyDiff(grid: Grid, diff: GridDiff): void {
    for (let i = 0; i < diff.indices.length; i++) grid.data[diff.indices[i]] = diff.after[i];
}

export function revertDiff(grid: Grid, diff: GridDiff): void {
    for (let i = 0; i < diff.indices.length; i++) grid.data[diff.indices[i]] = diff.before[i];
}
