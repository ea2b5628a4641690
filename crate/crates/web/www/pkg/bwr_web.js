/* @ts-self-types="./bwr_web.d.ts" */

/**
 * Zero-torque biped released above the ground.
 */
export class DropDemo {
    __destroy_into_raw() {
        const ptr = this.__wbg_ptr;
        this.__wbg_ptr = 0;
        DropDemoFinalization.unregister(this);
        return ptr;
    }
    free() {
        const ptr = this.__destroy_into_raw();
        wasm.__wbg_dropdemo_free(ptr, 0);
    }
    /**
     * Advances simulated time by `seconds` in 1 ms steps.
     * @param {number} seconds
     */
    advance(seconds) {
        const ret = wasm.dropdemo_advance(this.__wbg_ptr, seconds);
        if (ret[1]) {
            throw takeFromExternrefTable0(ret[0]);
        }
    }
    /**
     * Kinetic plus gravitational energy, J.
     * @returns {number}
     */
    energy() {
        const ret = wasm.dropdemo_energy(this.__wbg_ptr);
        return ret;
    }
    /**
     * `height` is the clearance of the lower foot, m; `splay` the hip
     * angle of each leg, rad (right forward, left back); `knee` the knee
     * flexion, rad.
     * @param {number} height
     * @param {number} splay
     * @param {number} knee
     * @param {number} contact_stiffness
     * @param {number} gravity
     */
    constructor(height, splay, knee, contact_stiffness, gravity) {
        const ret = wasm.dropdemo_new(height, splay, knee, contact_stiffness, gravity);
        if (ret[2]) {
            throw takeFromExternrefTable0(ret[1]);
        }
        this.__wbg_ptr = ret[0];
        DropDemoFinalization.register(this, this.__wbg_ptr, this);
        return this;
    }
    /**
     * Total ground normal force, N.
     * @returns {number}
     */
    normal_force() {
        const ret = wasm.dropdemo_normal_force(this.__wbg_ptr);
        return ret;
    }
    /**
     * Link segments as `[x0, z0, x1, z1]` for waist, thighs, shanks.
     * @returns {Float64Array}
     */
    segments() {
        const ret = wasm.dropdemo_segments(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
    /**
     * @returns {number}
     */
    time() {
        const ret = wasm.dropdemo_time(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    waist_height() {
        const ret = wasm.dropdemo_waist_height(this.__wbg_ptr);
        return ret;
    }
    /**
     * Weight of the robot, N; the normal force settles here.
     * @returns {number}
     */
    weight() {
        const ret = wasm.dropdemo_weight(this.__wbg_ptr);
        return ret;
    }
}
if (Symbol.dispose) DropDemo.prototype[Symbol.dispose] = DropDemo.prototype.free;

/**
 * Gait report of a constructed trace (antiphase hips, knees at twice the
 * hip frequency), sampled at 50 Hz.
 * @param {number} hip_hz
 * @param {number} seconds
 * @param {number} speed
 * @returns {string}
 */
export function gait_report(hip_hz, seconds, speed) {
    let deferred2_0;
    let deferred2_1;
    try {
        const ret = wasm.gait_report(hip_hz, seconds, speed);
        var ptr1 = ret[0];
        var len1 = ret[1];
        if (ret[3]) {
            ptr1 = 0; len1 = 0;
            throw takeFromExternrefTable0(ret[2]);
        }
        deferred2_0 = ptr1;
        deferred2_1 = len1;
        return getStringFromWasm0(ptr1, len1);
    } finally {
        wasm.__wbindgen_free(deferred2_0, deferred2_1, 1);
    }
}

/**
 * SVG of the constructed trace's hips (`knees = false`) or knees.
 * @param {number} hip_hz
 * @param {number} seconds
 * @param {number} speed
 * @param {boolean} knees
 * @returns {string}
 */
export function gait_svg(hip_hz, seconds, speed, knees) {
    let deferred2_0;
    let deferred2_1;
    try {
        const ret = wasm.gait_svg(hip_hz, seconds, speed, knees);
        var ptr1 = ret[0];
        var len1 = ret[1];
        if (ret[3]) {
            ptr1 = 0; len1 = 0;
            throw takeFromExternrefTable0(ret[2]);
        }
        deferred2_0 = ptr1;
        deferred2_1 = len1;
        return getStringFromWasm0(ptr1, len1);
    } finally {
        wasm.__wbindgen_free(deferred2_0, deferred2_1, 1);
    }
}

/**
 * One-dimensional OU path of `steps` unit steps from the mean.
 * @param {number} theta
 * @param {number} sigma
 * @param {number} mu
 * @param {number} steps
 * @param {bigint} seed
 * @returns {Float64Array}
 */
export function ou_path(theta, sigma, mu, steps, seed) {
    const ret = wasm.ou_path(theta, sigma, mu, steps, seed);
    var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
    wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
    return v1;
}

/**
 * Stationary standard deviation `σ / √(2θ − θ²)`; NaN outside `0 < θ < 2`.
 * @param {number} theta
 * @param {number} sigma
 * @returns {number}
 */
export function ou_stationary_std(theta, sigma) {
    const ret = wasm.ou_stationary_std(theta, sigma);
    return ret;
}
function __wbg_get_imports() {
    const import0 = {
        __proto__: null,
        __wbg___wbindgen_throw_41e9ee4f547fc59a: function(arg0, arg1) {
            throw new Error(getStringFromWasm0(arg0, arg1));
        },
        __wbindgen_generic_0000000000000001: function(arg0, arg1) {
            // Cast intrinsic for `Ref(String) -> Externref`.
            const ret = getStringFromWasm0(arg0, arg1);
            return ret;
        },
        __wbindgen_init_externref_table: function() {
            const table = wasm.__wbindgen_externrefs;
            const offset = table.grow(4);
            table.set(0, undefined);
            table.set(offset + 0, undefined);
            table.set(offset + 1, null);
            table.set(offset + 2, true);
            table.set(offset + 3, false);
        },
    };
    return {
        __proto__: null,
        "./bwr_web_bg.js": import0,
    };
}

const DropDemoFinalization = (typeof FinalizationRegistry === 'undefined')
    ? { register: () => {}, unregister: () => {} }
    : new FinalizationRegistry(ptr => wasm.__wbg_dropdemo_free(ptr, 1));

function getArrayF64FromWasm0(ptr, len) {
    ptr = ptr >>> 0;
    return getFloat64ArrayMemory0().subarray(ptr / 8, ptr / 8 + len);
}

let cachedFloat64ArrayMemory0 = null;
function getFloat64ArrayMemory0() {
    if (cachedFloat64ArrayMemory0 === null || cachedFloat64ArrayMemory0.byteLength === 0) {
        cachedFloat64ArrayMemory0 = new Float64Array(wasm.memory.buffer);
    }
    return cachedFloat64ArrayMemory0;
}

function getStringFromWasm0(ptr, len) {
    return decodeText(ptr >>> 0, len);
}

let cachedUint8ArrayMemory0 = null;
function getUint8ArrayMemory0() {
    if (cachedUint8ArrayMemory0 === null || cachedUint8ArrayMemory0.byteLength === 0) {
        cachedUint8ArrayMemory0 = new Uint8Array(wasm.memory.buffer);
    }
    return cachedUint8ArrayMemory0;
}

function takeFromExternrefTable0(idx) {
    const value = wasm.__wbindgen_externrefs.get(idx);
    wasm.__externref_table_dealloc(idx);
    return value;
}

let cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
cachedTextDecoder.decode();
const MAX_SAFARI_DECODE_BYTES = 2146435072;
let numBytesDecoded = 0;
function decodeText(ptr, len) {
    numBytesDecoded += len;
    if (numBytesDecoded >= MAX_SAFARI_DECODE_BYTES) {
        cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
        cachedTextDecoder.decode();
        numBytesDecoded = len;
    }
    return cachedTextDecoder.decode(getUint8ArrayMemory0().subarray(ptr, ptr + len));
}

let wasmModule, wasmInstance, wasm;
function __wbg_finalize_init(instance, module) {
    wasmInstance = instance;
    wasm = instance.exports;
    wasmModule = module;
    cachedFloat64ArrayMemory0 = null;
    cachedUint8ArrayMemory0 = null;
    wasm.__wbindgen_start();
    return wasm;
}

async function __wbg_load(module, imports) {
    if (typeof Response === 'function' && module instanceof Response) {
        if (!module.ok) {
            throw new Error(`failed to fetch Wasm: ${module.status} ${module.statusText} fetching '${module.url}'`);
        }

        if (typeof WebAssembly.instantiateStreaming === 'function') {
            try {
                return await WebAssembly.instantiateStreaming(module, imports);
            } catch (e) {
                const validResponse = expectedResponseType(module.type);

                if (validResponse && module.headers.get('Content-Type') !== 'application/wasm') {
                    console.warn("`WebAssembly.instantiateStreaming` failed because your server does not serve Wasm with `application/wasm` MIME type. Falling back to `WebAssembly.instantiate` which is slower. Original error:\n", e);

                } else { throw e; }
            }
        }

        const bytes = await module.arrayBuffer();
        return await WebAssembly.instantiate(bytes, imports);
    } else {
        const instance = await WebAssembly.instantiate(module, imports);

        if (instance instanceof WebAssembly.Instance) {
            return { instance, module };
        } else {
            return instance;
        }
    }

    function expectedResponseType(type) {
        switch (type) {
            case 'basic': case 'cors': case 'default': return true;
        }
        return false;
    }
}

function initSync(module) {
    if (wasm !== undefined) return wasm;


    if (module !== undefined) {
        if (Object.getPrototypeOf(module) === Object.prototype) {
            ({module} = module)
        } else {
            console.warn('using deprecated parameters for `initSync()`; pass a single object instead')
        }
    }

    const imports = __wbg_get_imports();
    if (!(module instanceof WebAssembly.Module)) {
        module = new WebAssembly.Module(module);
    }
    const instance = new WebAssembly.Instance(module, imports);
    return __wbg_finalize_init(instance, module);
}

async function __wbg_init(module_or_path) {
    if (wasm !== undefined) return wasm;


    if (module_or_path !== undefined) {
        if (Object.getPrototypeOf(module_or_path) === Object.prototype) {
            ({module_or_path} = module_or_path)
        } else {
            console.warn('using deprecated parameters for the initialization function; pass a single object instead')
        }
    }

    if (module_or_path === undefined) {
        module_or_path = new URL('bwr_web_bg.wasm', import.meta.url);
    }
    const imports = __wbg_get_imports();

    if (typeof module_or_path === 'string' || (typeof Request === 'function' && module_or_path instanceof Request) || (typeof URL === 'function' && module_or_path instanceof URL)) {
        module_or_path = fetch(module_or_path);
    }

    const { instance, module } = await __wbg_load(await module_or_path, imports);

    return __wbg_finalize_init(instance, module);
}

export { initSync, __wbg_init as default };
