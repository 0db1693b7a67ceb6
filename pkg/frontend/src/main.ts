// Application bootstrap: session upload form, toolbar, canvas editor.
import { ApiClient } from "./api.js";
import { CanvasEditor } from "./editor.js";
import { gridFromMaskPng, DEFAULT_VIEW, EditorController, panBy, setOpacity, toggleOverlay, zoomTo } from "./state.js";
import { PaletteInfo } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
};

async function boot(): Promise<void> {
    const api = new ApiClient(
        (document.querySelector("meta[name=maskgan-api]") as HTMLMetaElement)?.content ?? "",
    );
    const status = $("status");
    let palette: PaletteInfo;
    try {
        palette = await api.getPalette();
    } catch (err) {
        status.textContent = `server unavailable: ${err instanceof Error ? err.message : err}`;
        return;
    }
    status.textContent = `connected (${palette.categories.length} categories, ` +
        `${palette.resolution}x${palette.resolution})`;

    const categorySelect = $<HTMLSelectElement>("category");
    for (const cat of palette.categories) {
        const option = document.createElement("option");
        option.value = String(cat.index);
        option.textContent = `${cat.index}: ${cat.name}`;
        categorySelect.appendChild(option);
    }

    $<HTMLFormElement>("upload-form").addEventListener("submit", async (ev) => {
        ev.preventDefault();
        const imageFile = $<HTMLInputElement>("image-file").files?.[0];
        const maskFile = $<HTMLInputElement>("mask-file").files?.[0];
        if (!imageFile) {
            status.textContent = "choose a target image first";
            return;
        }
        try {
            const session = await api.createSession(imageFile, maskFile ?? undefined);
            await startEditing(api, palette, session.id, session.maskPng, session.renderPng);
            status.textContent = `session ${session.id.slice(0, 8)}…`;
        } catch (err) {
            status.textContent = `upload failed: ${err instanceof Error ? err.message : err}`;
        }
    });

    async function startEditing(api: ApiClient, palette: PaletteInfo, sessionId: string,
                                maskPng: Uint8Array, renderPng: Uint8Array): Promise<void> {
        const grid = await gridFromMaskPng(maskPng);
        const canvas = $<HTMLCanvasElement>("editor-canvas");
        canvas.width = canvas.height = 512;
        const errorBanner = $("error-banner");
        const controller = new EditorController(
            api, sessionId, grid, renderPng,
            (png) => void editor.setRender(png),
            (message) => {
                errorBanner.textContent = message;
                errorBanner.hidden = false;
            },
        );
        const editor = new CanvasEditor(canvas, controller, palette, { ...DEFAULT_VIEW });
        await editor.setRender(renderPng);

        categorySelect.addEventListener("change", () => {
            controller.brush.category = Number(categorySelect.value);
        });
        $<HTMLInputElement>("radius").addEventListener("input", (ev) => {
            controller.brush.radius = Number((ev.target as HTMLInputElement).value);
        });
        $<HTMLSelectElement>("brush-shape").addEventListener("change", (ev) => {
            controller.brush.shape =
                (ev.target as HTMLSelectElement).value as "round" | "fill-bucket";
        });
        $("undo").addEventListener("click", () => {
            controller.undo();
            editor.draw();
        });
        $("redo").addEventListener("click", () => {
            controller.redo();
            editor.draw();
        });
        $("submit-edit").addEventListener("click", () => {
            errorBanner.hidden = true;
            void controller.submit();
        });
        $("overlay-toggle").addEventListener("click", () => editor.setView(toggleOverlay(editor.view)));
        $<HTMLInputElement>("opacity").addEventListener("input", (ev) => {
            editor.setView(setOpacity(editor.view, Number((ev.target as HTMLInputElement).value)));
        });
        $("zoom-in").addEventListener("click", () => editor.setView(zoomTo(editor.view, editor.view.zoom * 2)));
        $("zoom-out").addEventListener("click", () => editor.setView(zoomTo(editor.view, editor.view.zoom / 2)));
        canvas.addEventListener("wheel", (ev) => {
            ev.preventDefault();
            editor.setView(panBy(editor.view, ev.deltaX, ev.deltaY, canvas.width));
        });
        document.addEventListener("keydown", (ev) => {
            if ((ev.ctrlKey || ev.metaKey) && ev.key === "z" && !ev.shiftKey) {
                controller.undo();
                editor.draw();
            } else if ((ev.ctrlKey || ev.metaKey) && (ev.key === "y" || (ev.key === "z" && ev.shiftKey))) {
                controller.redo();
                editor.draw();
            } else if (ev.key === "Enter" && (ev.ctrlKey || ev.metaKey)) {
                void controller.submit();
            }
        });
    }
}

void boot();
