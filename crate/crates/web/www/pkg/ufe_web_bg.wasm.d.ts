/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_sceneresult_free: (a: number, b: number) => void;
export const beamPattern: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const binFrequency: (a: number) => number;
export const sceneresult_bins: (a: number) => number;
export const sceneresult_curves: (a: number) => [number, number];
export const sceneresult_estimates: (a: number) => [number, number];
export const sceneresult_features: (a: number) => [number, number];
export const sceneresult_frames: (a: number) => number;
export const sceneresult_spectrogram: (a: number) => [number, number];
export const simulateScene: (a: number, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
