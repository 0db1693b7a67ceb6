// Minimal PNG codec for label masks: encodes 8-bit grayscale (pixel value =
// category index), decodes 8/4/2/1-bit grayscale or indexed images — the two
// single-channel forms the server emits and accepts. Compression rides on the
// platform CompressionStream/DecompressionStream ("deflate" = zlib), so this
// works identically in browsers and node without dependencies.
import { Grid } from "./types.js";

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
    const table = new Uint32Array(256);
    for (let n = 0; n < 256; n++) {
        let c = n;
        for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
        table[n] = c >>> 0;
    }
    return table;
})();

function crc32(...parts: Uint8Array[]): number {
    let crc = 0xffffffff;
    for (const part of parts) {
        for (let i = 0; i < part.length; i++) {
            crc = CRC_TABLE[(crc ^ part[i]) & 0xff] ^ (crc >>> 8);
        }
    }
    return (crc ^ 0xffffffff) >>> 0;
}

function be32(value: number): Uint8Array {
    return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff]);
}

function readBe32(bytes: Uint8Array, offset: number): number {
    return ((bytes[offset] << 24) | (bytes[offset + 1] << 16) | (bytes[offset + 2] << 8) | bytes[offset + 3]) >>> 0;
}

async function pumpStream(stream: { readable: ReadableStream; writable: WritableStream }, input: Uint8Array): Promise<Uint8Array> {
    const writer = stream.writable.getWriter();
    void writer.write(input);
    void writer.close();
    const chunks: Uint8Array[] = [];
    const reader = stream.readable.getReader();
    for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        chunks.push(value as Uint8Array);
    }
    let size = 0;
    for (const c of chunks) size += c.length;
    const out = new Uint8Array(size);
    let at = 0;
    for (const c of chunks) {
        out.set(c, at);
        at += c.length;
    }
    return out;
}

const zlibDeflate = (data: Uint8Array) => pumpStream(new CompressionStream("deflate"), data);
const zlibInflate = (data: Uint8Array) => pumpStream(new DecompressionStream("deflate"), data);

function chunk(type: string, data: Uint8Array): Uint8Array {
    const typeBytes = new TextEncoder().encode(type);
    const out = new Uint8Array(12 + data.length);
    out.set(be32(data.length), 0);
    out.set(typeBytes, 4);
    out.set(data, 8);
    out.set(be32(crc32(typeBytes, data)), 8 + data.length);
    return out;
}

/** Encode a label grid as an 8-bit grayscale PNG (pixel value = index). */
export async function encodeMaskPng(grid: Grid): Promise<Uint8Array> {
    const { width, height, data } = grid;
    if (data.length !== width * height) throw new Error("grid size mismatch");
    const ihdr = new Uint8Array(13);
    ihdr.set(be32(width), 0);
    ihdr.set(be32(height), 4);
    ihdr[8] = 8; // bit depth
    ihdr[9] = 0; // grayscale
    const raw = new Uint8Array(height * (width + 1));
    for (let y = 0; y < height; y++) {
        raw[y * (width + 1)] = 0; // filter: none
        raw.set(data.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
    }
    const idat = await zlibDeflate(raw);
    const parts = [new Uint8Array(SIGNATURE), chunk("IHDR", ihdr), chunk("IDAT", idat), chunk("IEND", new Uint8Array(0))];
    let size = 0;
    for (const p of parts) size += p.length;
    const out = new Uint8Array(size);
    let at = 0;
    for (const p of parts) {
        out.set(p, at);
        at += p.length;
    }
    return out;
}

export interface DecodedMask {
    grid: Grid;
    /** RGB triples when the file was indexed; null for grayscale. */
    palette: [number, number, number][] | null;
}

function paeth(a: number, b: number, c: number): number {
    const p = a + b - c;
    const pa = Math.abs(p - a);
    const pb = Math.abs(p - b);
    const pc = Math.abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
}

function unfilter(raw: Uint8Array, rowBytes: number, height: number): Uint8Array {
    // bpp is 1 byte for every depth <= 8 with one channel
    const out = new Uint8Array(rowBytes * height);
    for (let y = 0; y < height; y++) {
        const filter = raw[y * (rowBytes + 1)];
        const src = raw.subarray(y * (rowBytes + 1) + 1, (y + 1) * (rowBytes + 1));
        const row = out.subarray(y * rowBytes, (y + 1) * rowBytes);
        const prev = y > 0 ? out.subarray((y - 1) * rowBytes, y * rowBytes) : null;
        for (let x = 0; x < rowBytes; x++) {
            const left = x > 0 ? row[x - 1] : 0;
            const up = prev ? prev[x] : 0;
            const upLeft = prev && x > 0 ? prev[x - 1] : 0;
            let value = src[x];
            switch (filter) {
                case 0: break;
                case 1: value += left; break;
                case 2: value += up; break;
                case 3: value += (left + up) >> 1; break;
                case 4: value += paeth(left, up, upLeft); break;
                default: throw new Error(`unsupported PNG filter ${filter}`);
            }
            row[x] = value & 0xff;
        }
    }
    return out;
}

function unpackBits(rowBytes: Uint8Array, width: number, depth: number): Uint8Array {
    if (depth === 8) return rowBytes.subarray(0, width);
    const out = new Uint8Array(width);
    const per = 8 / depth;
    const mask = (1 << depth) - 1;
    for (let x = 0; x < width; x++) {
        const byte = rowBytes[Math.floor(x / per)];
        const shift = 8 - depth * ((x % per) + 1);
        out[x] = (byte >> shift) & mask;
    }
    return out;
}

/** Decode a single-channel (grayscale or indexed) PNG into a label grid. */
export async function decodeMaskPng(bytes: Uint8Array): Promise<DecodedMask> {
    for (let i = 0; i < SIGNATURE.length; i++) {
        if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
    }
    let offset = 8;
    let width = 0;
    let height = 0;
    let depth = 0;
    let colorType = -1;
    let palette: [number, number, number][] | null = null;
    const idatParts: Uint8Array[] = [];
    while (offset < bytes.length) {
        const length = readBe32(bytes, offset);
        const type = String.fromCharCode(...bytes.subarray(offset + 4, offset + 8));
        const data = bytes.subarray(offset + 8, offset + 8 + length);
        if (type === "IHDR") {
            width = readBe32(data, 0);
            height = readBe32(data, 4);
            depth = data[8];
            colorType = data[9];
            if (data[12] !== 0) throw new Error("interlaced PNG not supported");
            if (colorType !== 0 && colorType !== 3) {
                throw new Error(`mask PNG must be grayscale or indexed, got color type ${colorType}`);
            }
            if (![1, 2, 4, 8].includes(depth)) throw new Error(`unsupported bit depth ${depth}`);
        } else if (type === "PLTE") {
            palette = [];
            for (let i = 0; i + 2 < data.length; i += 3) {
                palette.push([data[i], data[i + 1], data[i + 2]]);
            }
        } else if (type === "IDAT") {
            idatParts.push(data);
        } else if (type === "IEND") {
            break;
        }
        offset += 12 + length;
    }
    if (!width || !height || !idatParts.length) throw new Error("truncated PNG");
    let size = 0;
    for (const p of idatParts) size += p.length;
    const compressed = new Uint8Array(size);
    let at = 0;
    for (const p of idatParts) {
        compressed.set(p, at);
        at += p.length;
    }
    const raw = await zlibInflate(compressed);
    const rowBytes = Math.ceil((width * depth) / 8);
    if (raw.length < height * (rowBytes + 1)) throw new Error("PNG data too short");
    const unfiltered = unfilter(raw, rowBytes, height);
    const data = new Uint8Array(width * height);
    for (let y = 0; y < height; y++) {
        data.set(unpackBits(unfiltered.subarray(y * rowBytes, (y + 1) * rowBytes), width, depth), y * width);
    }
    return { grid: { width, height, data }, palette };
}

export function base64ToBytes(b64: string): Uint8Array {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
}

export function bytesToBase64(bytes: Uint8Array): string {
    let bin = "";
    const step = 0x8000;
    for (let i = 0; i < bytes.length; i += step) {
        bin += String.fromCharCode(...bytes.subarray(i, i + step));
    }
    return btoa(bin);
}
