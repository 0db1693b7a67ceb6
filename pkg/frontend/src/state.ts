// Editor state: the label grid, its history, and explicit-submit plumbing
// with queue-coalescing (at most one edit request in flight; newer submits
// replace any waiting one).
import { ApiClient } from "./api.js";
import { paintStroke } from "./grid.js";
import { History } from "./history.js";
import { decodeMaskPng, encodeMaskPng } from "./png.js";
import { Brush, cloneGrid, Grid, gridsEqual, Point } from "./types.js";

export interface ViewState {
    zoom: number;
    panX: number;
    panY: number;
    overlayVisible: boolean;
    overlayOpacity: number;
}

export const DEFAULT_VIEW: ViewState = {
    zoom: 1,
    panX: 0,
    panY: 0,
    overlayVisible: true,
    overlayOpacity: 0.6,
};

export const MIN_ZOOM = 1;
export const MAX_ZOOM = 16;

export function zoomTo(view: ViewState, zoom: number): ViewState {
    return { ...view, zoom: Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, zoom)) };
}

/** Pan clamped so the viewport never leaves the zoomed canvas. */
export function panBy(view: ViewState, dx: number, dy: number,
                      canvasSize: number): ViewState {
    const limit = canvasSize * (view.zoom - 1);
    return {
        ...view,
        panX: Math.min(limit, Math.max(0, view.panX + dx)),
        panY: Math.min(limit, Math.max(0, view.panY + dy)),
    };
}

export function toggleOverlay(view: ViewState): ViewState {
    return { ...view, overlayVisible: !view.overlayVisible };
}

export function setOpacity(view: ViewState, opacity: number): ViewState {
    return { ...view, overlayOpacity: Math.min(1, Math.max(0, opacity)) };
}

export class EditorController {
    grid: Grid;
    history = new History();
    brush: Brush = { category: 1, radius: 2, shape: "round" };
    dirty = false;
    lastRender: Uint8Array | null = null;
    lastError: string | null = null;

    private inflight: Promise<void> | null = null;
    private pendingGrid: Grid | null = null;

    constructor(private api: ApiClient, private sessionId: string, grid: Grid,
                initialRender: Uint8Array | null = null,
                private onRender: (png: Uint8Array) => void = () => {},
                private onError: (message: string) => void = () => {}) {
        this.grid = grid;
        this.lastRender = initialRender;
    }

    paint(path: Point[]): void {
        const diff = paintStroke(this.grid, path, this.brush);
        if (diff.indices.length) {
            this.history.push(diff);
            this.dirty = true;
        }
    }

    undo(): boolean {
        const changed = this.history.undo(this.grid);
        if (changed) this.dirty = true;
        return changed;
    }

    redo(): boolean {
        const changed = this.history.redo(this.grid);
        if (changed) this.dirty = true;
        return changed;
    }

    /**
     * Submit the current grid. While a request is in flight later submits
     * coalesce: only the newest snapshot is sent afterwards.
     */
    async submit(): Promise<void> {
        const snapshot = cloneGrid(this.grid);
        if (this.inflight) {
            this.pendingGrid = snapshot;
            return this.inflight;
        }
        this.inflight = this.send(snapshot);
        try {
            await this.inflight;
        } finally {
            this.inflight = null;
        }
        if (this.pendingGrid) {
            const next = this.pendingGrid;
            this.pendingGrid = null;
            if (this.lastSent === null || !gridsEqual(next, this.lastSent)) {
                await this.submit2(next);
            }
        }
    }

    private lastSent: Grid | null = null;

    private async submit2(grid: Grid): Promise<void> {
        this.inflight = this.send(grid);
        try {
            await this.inflight;
        } finally {
            this.inflight = null;
        }
    }

    private async send(grid: Grid): Promise<void> {
        try {
            const png = await encodeMaskPng(grid);
            const render = await this.api.submitEdit(this.sessionId, png);
            this.lastRender = render;
            this.lastSent = grid;
            this.lastError = null;
            if (gridsEqual(grid, this.grid)) this.dirty = false;
            this.onRender(render);
        } catch (err) {
            // server rejected the mask or is unreachable: keep the editable
            // state untouched and surface the message
            this.lastError = err instanceof Error ? err.message : String(err);
            this.onError(this.lastError);
        }
    }
}

export async function gridFromMaskPng(bytes: Uint8Array): Promise<Grid> {
    return (await decodeMaskPng(bytes)).grid;
}
