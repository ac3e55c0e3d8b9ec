import type { AlertDict, FusionWeights } from "./types.js";

/** Stored and recomputed fused scores must agree to this absolute tolerance. */
export const FUSE_TOLERANCE = 1e-9;

/** Weighted combination of the two per-model normal-class probabilities. */
export function recomputeFused(weights: FusionWeights, p1: number, p2: number): number {
  return weights.s0 * p1 + weights.s1 * p2;
}

/** True when the stored fused score matches the client-side recomputation. */
export function fusedConsistent(alert: AlertDict, weights: FusionWeights): boolean {
  return Math.abs(recomputeFused(weights, alert.p1, alert.p2) - alert.fused) <= FUSE_TOLERANCE;
}

/** Decision rule: normal only when the fused normal-class score clears 0.5. */
export function decide(fused: number): 0 | 1 {
  return fused > 0.5 ? 0 : 1;
}
