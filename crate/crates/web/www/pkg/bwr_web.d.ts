/* tslint:disable */
/* eslint-disable */

/**
 * Zero-torque biped released above the ground.
 */
export class DropDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Advances simulated time by `seconds` in 1 ms steps.
     */
    advance(seconds: number): void;
    /**
     * Kinetic plus gravitational energy, J.
     */
    energy(): number;
    /**
     * `height` is the clearance of the lower foot, m; `splay` the hip
     * angle of each leg, rad (right forward, left back); `knee` the knee
     * flexion, rad.
     */
    constructor(height: number, splay: number, knee: number, contact_stiffness: number, gravity: number);
    /**
     * Total ground normal force, N.
     */
    normal_force(): number;
    /**
     * Link segments as `[x0, z0, x1, z1]` for waist, thighs, shanks.
     */
    segments(): Float64Array;
    time(): number;
    waist_height(): number;
    /**
     * Weight of the robot, N; the normal force settles here.
     */
    weight(): number;
}

/**
 * Gait report of a constructed trace (antiphase hips, knees at twice the
 * hip frequency), sampled at 50 Hz.
 */
export function gait_report(hip_hz: number, seconds: number, speed: number): string;

/**
 * SVG of the constructed trace's hips (`knees = false`) or knees.
 */
export function gait_svg(hip_hz: number, seconds: number, speed: number, knees: boolean): string;

/**
 * One-dimensional OU path of `steps` unit steps from the mean.
 */
export function ou_path(theta: number, sigma: number, mu: number, steps: number, seed: bigint): Float64Array;

/**
 * Stationary standard deviation `σ / √(2θ − θ²)`; NaN outside `0 < θ < 2`.
 */
export function ou_stationary_std(theta: number, sigma: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_dropdemo_free: (a: number, b: number) => void;
    readonly dropdemo_advance: (a: number, b: number) => [number, number];
    readonly dropdemo_energy: (a: number) => number;
    readonly dropdemo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly dropdemo_normal_force: (a: number) => number;
    readonly dropdemo_segments: (a: number) => [number, number];
    readonly dropdemo_time: (a: number) => number;
    readonly dropdemo_waist_height: (a: number) => number;
    readonly dropdemo_weight: (a: number) => number;
    readonly gait_report: (a: number, b: number, c: number) => [number, number, number, number];
    readonly gait_svg: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly ou_path: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
    readonly ou_stationary_std: (a: number, b: number) => number;
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
