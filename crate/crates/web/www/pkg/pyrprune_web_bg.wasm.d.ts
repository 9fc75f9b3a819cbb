/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_prunesession_free: (a: number, b: number) => void;
export const prunesession_cost: (a: number) => [number, number, number, number];
export const prunesession_heatmap: (a: number) => [number, number, number, number];
export const prunesession_new: (a: number, b: number) => [number, number, number];
export const prunesession_summary: (a: number) => [number, number];
export const pyramid_layout: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
