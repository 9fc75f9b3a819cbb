/* tslint:disable */
/* eslint-disable */

/**
 * Result of one oracle-driven pruning run.
 */
export class PruneSession {
    free(): void;
    [Symbol.dispose](): void;
    cost(): string;
    /**
     * RGBA heatmap pixels; the size is packed into the first eight bytes
     * as two little-endian u32s.
     */
    heatmap(): Uint8Array;
    constructor(request: string);
    summary(): string;
}

/**
 * Tile boxes of every pyramid level for an image of the given size.
 */
export function pyramid_layout(width: number, height: number, tile_size: number, min_side: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_prunesession_free: (a: number, b: number) => void;
    readonly prunesession_cost: (a: number) => [number, number, number, number];
    readonly prunesession_heatmap: (a: number) => [number, number, number, number];
    readonly prunesession_new: (a: number, b: number) => [number, number, number];
    readonly prunesession_summary: (a: number) => [number, number];
    readonly pyramid_layout: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
