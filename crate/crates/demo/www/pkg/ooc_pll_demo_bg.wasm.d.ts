/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_run_free: (a: number, b: number) => void;
export const disambiguate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const lossTable: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const run_accuracy: (a: number, b: number) => number;
export const run_assigned: (a: number, b: number) => [number, number];
export const run_coords: (a: number) => [number, number];
export const run_epochs: (a: number) => number;
export const run_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const run_precision: (a: number, b: number) => [number, number];
export const run_truth: (a: number) => [number, number];
export const run_warmup: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
