/* tslint:disable */
/* eslint-disable */

export class Edges {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    edge_pixels(): number;
    masked_cells(): number;
    rgba(): Uint8Array;
}

export class Quantized {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Worst cell's distance to its nearest center.
     */
    bound(): number;
    /**
     * Codebook centers as interleaved `u, v`.
     */
    centers(): Float64Array;
    /**
     * Flow decoded from the one-hot labels, upsampled.
     */
    decoded_rgba(): Uint8Array;
    /**
     * Mean end-point error between decoded flow and cell means.
     */
    epe(): number;
    labels(): Uint32Array;
    /**
     * Per-cell mean flow, upsampled to the scene size.
     */
    means_rgba(): Uint8Array;
}

export class Scene {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    edges(sigma: number, low: number, high: number, grid: number): Edges;
    /**
     * Ground-truth flow in the color-wheel coding as RGBA bytes.
     */
    flow_rgba(): Uint8Array;
    static generate(kind: string, size: number, seed: number): Scene;
    /**
     * The first frame as RGBA bytes.
     */
    image_rgba(): Uint8Array;
    quantize(clusters: number, grid: number): Quantized;
    size(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_edges_free: (a: number, b: number) => void;
    readonly __wbg_quantized_free: (a: number, b: number) => void;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly edges_edge_pixels: (a: number) => number;
    readonly edges_masked_cells: (a: number) => number;
    readonly edges_rgba: (a: number) => [number, number];
    readonly quantized_bound: (a: number) => number;
    readonly quantized_centers: (a: number) => [number, number];
    readonly quantized_decoded_rgba: (a: number) => [number, number];
    readonly quantized_epe: (a: number) => number;
    readonly quantized_labels: (a: number) => [number, number];
    readonly quantized_means_rgba: (a: number) => [number, number];
    readonly scene_edges: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly scene_flow_rgba: (a: number) => [number, number];
    readonly scene_generate: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly scene_image_rgba: (a: number) => [number, number];
    readonly scene_quantize: (a: number, b: number, c: number) => [number, number, number];
    readonly scene_size: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
