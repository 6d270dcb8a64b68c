/** Cloaking math: bounded synthetic-event insertion.
 *
 * This is an independent implementation of the same contract the Python
 * pipeline follows, kept numerically aligned so the two can be checked
 * against shared golden fixtures: SplitMix64 for randomness, Box-Muller
 * for normals, identical draw order and redraw limits.  Do not reorder
 * RNG consumption here without regenerating the fixtures.
 */

const MASK64 = (1n << 64n) - 1n;
const GOLDEN64 = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

const TAIL_GAP_DEFAULT = 300.0; // virtual gap (ms) after a lone trailing event
const MAX_REDRAWS = 8;

/** SplitMix64 with float helpers, bit-identical to the Python twin. */
export class PortableRng {
  private state: bigint;

  constructor(seed: bigint) {
    this.state = seed & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + GOLDEN64) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
    z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
    return (z ^ (z >> 31n)) & MASK64;
  }

  /** Uniform double in (0, 1]; open low end keeps log() finite. */
  uniform(): number {
    return Number((this.nextU64() >> 11n) + 1n) * 2 ** -53;
  }

  /** One Box-Muller draw: two independent standard normals. */
  gaussPair(): [number, number] {
    const u1 = this.uniform();
    const u2 = this.uniform();
    const r = Math.sqrt(-2.0 * Math.log(u1));
    const a = 2.0 * Math.PI * u2;
    return [r * Math.cos(a), r * Math.sin(a)];
  }
}

export type SigmaMode = "fixed" | "uniform";
export type Distribution = "gaussian_radius" | "uniform_radius";

export interface NoiseParams {
  sigma_mode: SigmaMode;
  sigma: number;
  low: number;
  high: number;
  events_per_gap: number;
  distribution: Distribution;
}

export interface CloakEvent {
  x: number;
  y: number;
  t: number;
  name: string;
}

/** Smallest float64 step above x (x >= 0). */
function nextUp(x: number): number {
  if (Number.isNaN(x) || x === Infinity) return x;
  if (x === 0) return Number.MIN_VALUE;
  const buf = new DataView(new ArrayBuffer(8));
  buf.setFloat64(0, x);
  buf.setBigUint64(0, buf.getBigUint64(0) + (x > 0 ? 1n : -1n));
  return buf.getFloat64(0);
}

export function drawSigma(cfg: NoiseParams, rng: PortableRng): number {
  if (cfg.sigma_mode === "fixed") return cfg.sigma;
  return cfg.low + (cfg.high - cfg.low) * rng.uniform();
}

function drawDisplacement(
  sigma: number,
  distribution: Distribution,
  rng: PortableRng,
): [number, number] {
  if (distribution === "uniform_radius") {
    const r = sigma * Math.sqrt(rng.uniform());
    const a = 2.0 * Math.PI * rng.uniform();
    return [r * Math.cos(a), r * Math.sin(a)];
  }
  // gaussian bounded at the radius; scale-down fallback is effectively
  // unreachable (acceptance probability per try is about 0.39)
  let dx = 0;
  let dy = 0;
  for (let i = 0; i < 64; i++) {
    const [g1, g2] = rng.gaussPair();
    dx = sigma * g1;
    dy = sigma * g2;
    if (Math.hypot(dx, dy) <= sigma) return [dx, dy];
  }
  const norm = Math.hypot(dx, dy);
  const scale = norm > 0 ? (sigma * 0.999) / norm : 0.0;
  return [dx * scale, dy * scale];
}

/** Displaced position with both coordinates strictly positive. */
export function positivePosition(
  x: number,
  y: number,
  sigma: number,
  distribution: Distribution,
  rng: PortableRng,
): [number, number] {
  let nx = x;
  let ny = y;
  for (let i = 0; i < MAX_REDRAWS; i++) {
    const [dx, dy] = drawDisplacement(sigma, distribution, rng);
    nx = x + dx;
    ny = y + dy;
    if (nx > 0.0 && ny > 0.0) return [nx, ny];
  }
  nx = Math.abs(nx);
  ny = Math.abs(ny);
  if (nx <= 0.0) nx = Number.MIN_VALUE;
  if (ny <= 0.0) ny = Number.MIN_VALUE;
  return [nx, ny];
}

/** Nominal time plus Gaussian jitter, kept inside the open (lo, hi). */
function jitteredTime(
  nominal: number,
  sigma: number,
  lo: number,
  hi: number,
  rng: PortableRng,
): number {
  for (let i = 0; i < MAX_REDRAWS; i++) {
    const [g1] = rng.gaussPair();
    const t = nominal + sigma * g1;
    if (lo < t && t < hi) return t;
  }
  let t = (lo + hi) / 2.0;
  if (!(lo < t && t < hi)) t = nextUp(lo);
  return t;
}

/** Insert synthetic events after each genuine mousemove.
 *
 * The per-sequence radius is drawn first (uniform mode consumes one draw),
 * then gaps are processed in order.  A radius of exactly zero disables
 * insertion and returns the input unchanged.  Guarantees: genuine events
 * pass through verbatim in order, synthetic coordinates and times stay
 * strictly positive, output times are strictly increasing, and every
 * synthetic event lies within the radius of its genuine anchor.
 */
export function distortEvents(
  events: readonly CloakEvent[],
  cfg: NoiseParams,
  rng: PortableRng,
): CloakEvent[] {
  const sigma = drawSigma(cfg, rng);
  if (sigma === 0.0) return events.slice();

  const k = cfg.events_per_gap;
  const out: CloakEvent[] = [];
  const n = events.length;
  let prevGap = TAIL_GAP_DEFAULT;
  for (let i = 0; i < n; i++) {
    const ev = events[i]!;
    out.push(ev);
    if (ev.name !== "mousemove") continue;
    let gap: number;
    let upper: number;
    if (i + 1 < n) {
      gap = events[i + 1]!.t - ev.t;
      upper = events[i + 1]!.t;
      prevGap = gap;
    } else {
      gap = prevGap;
      upper = ev.t + gap;
    }
    let lastT = ev.t;
    for (let j = 0; j < k; j++) {
      const [nx, ny] = positivePosition(ev.x, ev.y, sigma, cfg.distribution, rng);
      const nominal = ev.t + (gap * (j + 1)) / (k + 1);
      let nt = jitteredTime(nominal, sigma, lastT, upper, rng);
      if (nt <= 0.0) nt = nextUp(lastT);
      out.push({ x: nx, y: ny, t: nt, name: "mousemove" });
      lastT = nt;
    }
  }
  return out;
}
