/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_dropdemo_free: (a: number, b: number) => void;
export const dropdemo_advance: (a: number, b: number) => [number, number];
export const dropdemo_energy: (a: number) => number;
export const dropdemo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const dropdemo_normal_force: (a: number) => number;
export const dropdemo_segments: (a: number) => [number, number];
export const dropdemo_time: (a: number) => number;
export const dropdemo_waist_height: (a: number) => number;
export const dropdemo_weight: (a: number) => number;
export const gait_report: (a: number, b: number, c: number) => [number, number, number, number];
export const gait_svg: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const ou_path: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
export const ou_stationary_std: (a: number, b: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
