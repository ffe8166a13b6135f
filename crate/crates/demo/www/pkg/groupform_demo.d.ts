/* tslint:disable */
/* eslint-disable */

/**
 * A partition together with a 2-D view of the embeddings.
 */
export class Formation {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Agreement with the finest planted blocks.
     */
    ari_leaf(): number;
    /**
     * Agreement with the top-level planted blocks.
     */
    ari_top(): number;
    membership(): Uint32Array;
    millis(): number;
    sizes(): Uint32Array;
    /**
     * Interleaved `x, y` per user along the two leading principal axes.
     */
    xy(): Float64Array;
}

/**
 * One synthetic population and the model being trained on it.
 */
export class Session {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * HR@10 and NDCG@10 per aggregation strategy (`avg`, `bc`, `lm`) for
     * the given groups, followed by the same three for raw-rating K-Means
     * at the same K. Six `[hr, ndcg]` pairs, flattened.
     */
    compare(formation: Formation): Float64Array;
    epochs_done(): number;
    /**
     * Partitions users into `k` groups using the current embeddings.
     */
    form(k: number): Formation;
    /**
     * Total loss after each completed epoch.
     */
    losses(): Float64Array;
    /**
     * `blocks` is a comma-separated hierarchy such as `"3"` or `"3,2,2"`.
     */
    constructor(users: number, items: number, blocks: string, noise: number, lr: number, seed: bigint);
    /**
     * Runs `n` more epochs and returns the last total loss.
     */
    train(n: number): number;
    users(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_formation_free: (a: number, b: number) => void;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly formation_ari_leaf: (a: number) => number;
    readonly formation_ari_top: (a: number) => number;
    readonly formation_membership: (a: number) => [number, number];
    readonly formation_millis: (a: number) => number;
    readonly formation_sizes: (a: number) => [number, number];
    readonly formation_xy: (a: number) => [number, number];
    readonly session_compare: (a: number, b: number) => [number, number, number, number];
    readonly session_epochs_done: (a: number) => number;
    readonly session_form: (a: number, b: number) => [number, number, number];
    readonly session_losses: (a: number) => [number, number];
    readonly session_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly session_train: (a: number, b: number) => [number, number, number];
    readonly session_users: (a: number) => number;
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
