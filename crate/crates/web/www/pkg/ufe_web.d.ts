/* tslint:disable */
/* eslint-disable */

export class SceneResult {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly bins: number;
    readonly curves: Float64Array;
    readonly estimates: Float64Array;
    readonly features: Float64Array;
    readonly frames: number;
    readonly spectrogram: Float64Array;
}

export function beamPattern(design: string, beam: number, num_beams: number, freq_hz: number, loading: number): Float64Array;

/**
 * Centre frequency in Hz of the STFT bin nearest `freq_hz`.
 */
export function binFrequency(freq_hz: number): number;

export function simulateScene(angles_deg: Float64Array, t60: number, seed: number): SceneResult;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_sceneresult_free: (a: number, b: number) => void;
    readonly beamPattern: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly binFrequency: (a: number) => number;
    readonly sceneresult_bins: (a: number) => number;
    readonly sceneresult_curves: (a: number) => [number, number];
    readonly sceneresult_estimates: (a: number) => [number, number];
    readonly sceneresult_features: (a: number) => [number, number];
    readonly sceneresult_frames: (a: number) => number;
    readonly sceneresult_spectrogram: (a: number) => [number, number];
    readonly simulateScene: (a: number, b: number, c: number, d: number) => [number, number, number];
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
