/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_edges_free: (a: number, b: number) => void;
export const __wbg_quantized_free: (a: number, b: number) => void;
export const __wbg_scene_free: (a: number, b: number) => void;
export const edges_edge_pixels: (a: number) => number;
export const edges_masked_cells: (a: number) => number;
export const edges_rgba: (a: number) => [number, number];
export const quantized_bound: (a: number) => number;
export const quantized_centers: (a: number) => [number, number];
export const quantized_decoded_rgba: (a: number) => [number, number];
export const quantized_epe: (a: number) => number;
export const quantized_labels: (a: number) => [number, number];
export const quantized_means_rgba: (a: number) => [number, number];
export const scene_edges: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const scene_flow_rgba: (a: number) => [number, number];
export const scene_generate: (a: number, b: number, c: number, d: number) => [number, number, number];
export const scene_image_rgba: (a: number) => [number, number];
export const scene_quantize: (a: number, b: number, c: number) => [number, number, number];
export const scene_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
