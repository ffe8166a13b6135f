/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_formation_free: (a: number, b: number) => void;
export const __wbg_session_free: (a: number, b: number) => void;
export const formation_ari_leaf: (a: number) => number;
export const formation_ari_top: (a: number) => number;
export const formation_membership: (a: number) => [number, number];
export const formation_millis: (a: number) => number;
export const formation_sizes: (a: number) => [number, number];
export const formation_xy: (a: number) => [number, number];
export const session_compare: (a: number, b: number) => [number, number, number, number];
export const session_epochs_done: (a: number) => number;
export const session_form: (a: number, b: number) => [number, number, number];
export const session_losses: (a: number) => [number, number];
export const session_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const session_train: (a: number, b: number) => [number, number, number];
export const session_users: (a: number) => number;
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
