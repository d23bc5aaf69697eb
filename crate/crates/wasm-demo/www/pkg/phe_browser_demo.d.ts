/* tslint:disable */
/* eslint-disable */

/**
 * Error traces of OGD, exact Bayes and PHE on the alternating stream.
 */
export function alternating(repeats: number, cycles: number, eta: number, phe_epochs: number, seed: bigint): string;

/**
 * Table states of OGD on `n` copies of item 0 followed by `n` of item 1.
 */
export function blocked_ogd(eta: number, n: number): string;

/**
 * Bucket signatures of newline-separated `items` under a fresh hash spec.
 */
export function signatures(items: string, bucket_count: number, num_hashes: number, weight_buckets: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly alternating: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly blocked_ogd: (a: number, b: number) => [number, number, number, number];
    readonly signatures: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
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
