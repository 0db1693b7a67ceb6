// Thin client over the editing service HTTP API.
import { base64ToBytes } from "./png.js";
import { PaletteInfo } from "./types.js";

export interface CreateSessionResponse {
    id: string;
    height: number;
    width: number;
    palette: { categories: PaletteInfo["categories"] };
    maskPng: Uint8Array;
    renderPng: Uint8Array;
}

export class ApiError extends Error {
    constructor(public status: number, message: string) {
        super(message);
    }
}

type FetchLike = typeof fetch;

export class ApiClient {
    constructor(private baseUrl: string, private fetchFn: FetchLike = fetch) {}

    private url(path: string): string {
        return this.baseUrl.replace(/\/$/, "") + path;
    }

    private async fail(resp: Response): Promise<never> {
        let detail = resp.statusText;
        try {
            const body = await resp.json();
            if (body && body.detail) detail = String(body.detail);
        } catch {
            // non-JSON error body; keep the status text
        }
        throw new ApiError(resp.status, detail);
    }

    async health(): Promise<{ status: string; model_loaded: boolean }> {
        const resp = await this.fetchFn(this.url("/healthz"));
        if (!resp.ok) return this.fail(resp);
        return resp.json();
    }

    async getPalette(): Promise<PaletteInfo> {
        const resp = await this.fetchFn(this.url("/palette"));
        if (!resp.ok) return this.fail(resp);
        return resp.json();
    }

    async createSession(image: Blob, mask?: Blob): Promise<CreateSessionResponse> {
        const form = new FormData();
        form.append("image", image, "image.png");
        if (mask) form.append("mask", mask, "mask.png");
        const resp = await this.fetchFn(this.url("/sessions"), { method: "POST", body: form });
        if (!resp.ok) return this.fail(resp);
        const body = await resp.json();
        return {
            id: body.id,
            height: body.height,
            width: body.width,
            palette: body.palette,
            maskPng: base64ToBytes(body.mask_png),
            renderPng: base64ToBytes(body.render_png),
        };
    }

    async submitEdit(sessionId: string, maskPng: Uint8Array): Promise<Uint8Array> {
        const body = new Uint8Array(maskPng).buffer as ArrayBuffer;
        const resp = await this.fetchFn(this.url(`/sessions/${sessionId}/edits`), {
            method: "POST",
            headers: { "content-type": "image/png" },
            body,
        });
        if (!resp.ok) return this.fail(resp);
        return new Uint8Array(await resp.arrayBuffer());
    }
}
