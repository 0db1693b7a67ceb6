export interface Category {
    index: number;
    name: string;
    color: [number, number, number];
}

export interface Palette {
    categories: Category[];
}

export interface PaletteInfo extends Palette {
    resolution: number;
}

export interface Grid {
    width: number;
    height: number;
    data: Uint8Array; // row-major category indices
}

export type BrushShape = "round" | "fill-bucket";

export interface Brush {
    category: number;
    radius: number;
    shape: BrushShape;
}

export interface Point {
    x: number;
    y: number;
}

/** Sparse record of one edit: index -> (before, after), revertible exactly. */
export interface GridDiff {
    indices: number[];
    before: number[];
    after: number[];
}

export function makeGrid(width: number, height: number, fill = 0): Grid {
    const data = new Uint8Array(width * height);
    if (fill) data.fill(fill);
    return { width, height, data };
}

export function cloneGrid(grid: Grid): Grid {
    return { width: grid.width, height: grid.height, data: new Uint8Array(grid.data) };
}

export function gridsEqual(a: Grid, b: Grid): boolean {
    if (a.width !== b.width || a.height !== b.height) return false;
    for (let i = 0; i < a.data.length; i++) {
        if (a.data[i] !== b.data[i]) return false;
    }
    return true;
}
