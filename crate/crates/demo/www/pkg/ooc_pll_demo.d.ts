/* tslint:disable */
/* eslint-disable */

/**
 * A finished small training run with every epoch's partition kept for
 * scrubbing.
 */
export class Run {
    free(): void;
    [Symbol.dispose](): void;
    accuracy(epoch: number): number;
    /**
     * Pool per example after `epoch`'s selection, same codes as
     * [`Run::truth`] plus [`UNASSIGNED`].
     */
    assigned(epoch: number): Uint8Array;
    /**
     * Interleaved `x, y` of every training example.
     */
    coords(): Float64Array;
    epochs(): number;
    constructor(seed: number, tau1: number, tau2: number, epochs: number);
    /**
     * Normal, closed and open precision; NaN before selection.
     */
    precision(epoch: number): Float64Array;
    /**
     * Hidden type per example: 0 normal, 1 closed-set, 2 open-set.
     */
    truth(): Uint8Array;
    warmup(): number;
}

export function disambiguate(logits: Float64Array, mask: string, reversed: boolean): Float64Array;

export function lossTable(logits: Float64Array, mask: string): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_run_free: (a: number, b: number) => void;
    readonly disambiguate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly lossTable: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly run_accuracy: (a: number, b: number) => number;
    readonly run_assigned: (a: number, b: number) => [number, number];
    readonly run_coords: (a: number) => [number, number];
    readonly run_epochs: (a: number) => number;
    readonly run_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly run_precision: (a: number, b: number) => [number, number];
    readonly run_truth: (a: number) => [number, number];
    readonly run_warmup: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
