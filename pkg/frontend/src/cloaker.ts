/** Live cloaking logic, separated from DOM wiring for testability.
 *
 * One Cloaker lives per page visit; its noise radius is drawn once at
 * construction (a page visit is one sequence), then every genuine move
 * produces events_per_gap displaced synthetic dispatches.
 */

import { drawSigma, PortableRng, positivePosition } from "./noise.js";
import type { NoiseParams } from "./noise.js";
import type { ExtensionSettings } from "./settings.js";

export function noiseParams(s: ExtensionSettings): NoiseParams {
  return {
    sigma_mode: s.sigma_mode,
    sigma: s.sigma,
    low: s.low,
    high: s.high,
    events_per_gap: s.events_per_gap,
    distribution: s.distribution,
  };
}

export class Cloaker {
  private readonly rng: PortableRng;
  private readonly params: NoiseParams;
  private readonly sigma: number;
  dispatched = 0;

  constructor(params: NoiseParams, rng: PortableRng) {
    this.params = params;
    this.rng = rng;
    this.sigma = drawSigma(params, rng);
  }

  /** Displaced positions to dispatch for one genuine move. */
  positionsFor(x: number, y: number): Array<[number, number]> {
    if (this.sigma === 0.0) return [];
    const out: Array<[number, number]> = [];
    for (let j = 0; j < this.params.events_per_gap; j++) {
      out.push(positivePosition(x, y, this.sigma, this.params.distribution, this.rng));
      this.dispatched += 1;
    }
    return out;
  }
}

/** Seed a portable generator from the platform RNG. */
export function platformSeed(): bigint {
  const a = new BigUint64Array(1);
  if (typeof crypto !== "undefined" && "getRandomValues" in crypto) {
    crypto.getRandomValues(a);
    return a[0]!;
  }
  return BigInt(Math.floor(Math.random() * 2 ** 53)) | (BigInt(Date.now()) << 20n);
}
