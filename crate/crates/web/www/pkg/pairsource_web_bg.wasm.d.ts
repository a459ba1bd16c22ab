/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const fidelity: (a: number, b: number, c: number) => [number, number, number];
export const optimalCompensator: () => [number, number, number, number];
export const phaseCurve: (a: number) => [number, number, number, number];
export const polarizerCurves: (a: number, b: number, c: number) => [number, number, number, number];
export const simulateAndFit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
