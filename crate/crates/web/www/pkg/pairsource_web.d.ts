/* tslint:disable */
/* eslint-disable */

export function fidelity(p: number, x: number, theta_deg: number): number;

export function optimalCompensator(): Float64Array;

export function phaseCurve(compensator_mm: number): Float64Array;

export function polarizerCurves(p: number, x: number, theta_deg: number): Float64Array;

export function simulateAndFit(p: number, x: number, theta_deg: number, power_mw: number, seed: number, resamples: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly fidelity: (a: number, b: number, c: number) => [number, number, number];
    readonly optimalCompensator: () => [number, number, number, number];
    readonly phaseCurve: (a: number) => [number, number, number, number];
    readonly polarizerCurves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly simulateAndFit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
