// Canvas wiring: draws the last render underneath the category overlay and
// feeds pointer gestures into the controller. View operations (zoom, pan,
// overlay) never touch the label grid.
import { EditorController, ViewState } from "./state.js";
import { Grid, Palette, Point } from "./types.js";

export class CanvasEditor {
    private ctx: CanvasRenderingContext2D;
    private renderBitmap: ImageBitmap | null = null;
    private stroke: Point[] | null = null;

    constructor(private canvas: HTMLCanvasElement, private controller: EditorController,
                private palette: Palette, public view: ViewState,
                private onViewChange: (v: ViewState) => void = () => {}) {
        const ctx = canvas.getContext("2d");
        if (!ctx) throw new Error("no 2d context");
        this.ctx = ctx;
        this.ctx.imageSmoothingEnabled = false;
        this.bindPointerEvents();
    }

    async setRender(png: Uint8Array): Promise<void> {
        const blob = new Blob([new Uint8Array(png)], { type: "image/png" });
        this.renderBitmap = await createImageBitmap(blob);
        this.draw();
    }

    /** Map a pointer event to grid coordinates under the current view. */
    toGrid(ev: { offsetX: number; offsetY: number }): Point {
        const grid = this.controller.grid;
        const scaleX = (this.canvas.width * this.view.zoom) / grid.width;
        const scaleY = (this.canvas.height * this.view.zoom) / grid.height;
        return {
            x: (ev.offsetX + this.view.panX) / scaleX,
            y: (ev.offsetY + this.view.panY) / scaleY,
        };
    }

    private bindPointerEvents(): void {
        this.canvas.addEventListener("pointerdown", (ev) => {
            this.canvas.setPointerCapture(ev.pointerId);
            this.stroke = [this.toGrid(ev)];
        });
        this.canvas.addEventListener("pointermove", (ev) => {
            if (!this.stroke) return;
            this.stroke.push(this.toGrid(ev));
            this.controller.paint(this.stroke.splice(0, this.stroke.length - 1));
            this.draw();
        });
        const finish = (ev: PointerEvent) => {
            if (!this.stroke) return;
            this.stroke.push(this.toGrid(ev));
            this.controller.paint(this.stroke);
            this.stroke = null;
            this.draw();
        };
        this.canvas.addEventListener("pointerup", finish);
        this.canvas.addEventListener("pointercancel", () => (this.stroke = null));
    }

    setView(view: ViewState): void {
        this.view = view;
        this.onViewChange(view);
        this.draw();
    }

    draw(): void {
        const { width, height } = this.canvas;
        this.ctx.clearRect(0, 0, width, height);
        this.ctx.save();
        this.ctx.translate(-this.view.panX, -this.view.panY);
        this.ctx.scale(this.view.zoom, this.view.zoom);
        if (this.renderBitmap) {
            this.ctx.drawImage(this.renderBitmap, 0, 0, width, height);
        }
        if (this.view.overlayVisible) {
            this.ctx.globalAlpha = this.view.overlayOpacity;
            this.ctx.drawImage(gridToCanvas(this.controller.grid, this.palette), 0, 0, width, height);
            this.ctx.globalAlpha = 1;
        }
        this.ctx.restore();
    }
}

export function gridToCanvas(grid: Grid, palette: Palette): HTMLCanvasElement {
    const canvas = document.createElement("canvas");
    canvas.width = grid.width;
    canvas.height = grid.height;
    const ctx = canvas.getContext("2d")!;
    const image = ctx.createImageData(grid.width, grid.height);
    const colors = palette.categories;
    for (let i = 0; i < grid.data.length; i++) {
        const color = colors[grid.data[i]]?.color ?? [255, 0, 255];
        image.data[i * 4] = color[0];
        image.data[i * 4 + 1] = color[1];
        image.data[i * 4 + 2] = color[2];
        image.data[i * 4 + 3] = 255;
    }
    ctx.putImageData(image, 0, 0);
    return canvas;
}
