/** Versioned extension settings with strict sanitization.
 *
 * Everything read from storage goes through sanitizeSettings so a stale,
 * corrupted, or future-versioned blob can never break the content script.
 * Saving always writes the current version; round-trips are lossless for
 * valid settings.
 */

import type { Distribution, SigmaMode } from "./noise.js";

export const SETTINGS_VERSION = 1;
export const STORAGE_KEY = "cursor_cloak_settings";

export interface ExtensionSettings {
  version: typeof SETTINGS_VERSION;
  enabled: boolean;
  /** Domains where protection is OFF: exact hosts or "*.suffix" patterns. */
  whitelist: string[];
  sigma_mode: SigmaMode;
  sigma: number;
  low: number;
  high: number;
  events_per_gap: number;
  distribution: Distribution;
  recorder_mode: boolean;
  poll_interval_ms: number;
}

export const DEFAULT_SETTINGS: ExtensionSettings = {
  version: SETTINGS_VERSION,
  enabled: true,
  whitelist: [],
  sigma_mode: "uniform",
  sigma: 0.25,
  low: 0.0,
  high: 1.0,
  events_per_gap: 1,
  distribution: "gaussian_radius",
  recorder_mode: false,
  poll_interval_ms: 150,
};

const HOST_RE = /^(\*\.)?[a-z0-9]([a-z0-9-]*[a-z0-9])?(\.[a-z0-9]([a-z0-9-]*[a-z0-9])?)*$/i;

export function isValidPattern(pattern: string): boolean {
  return pattern.length > 0 && pattern.length <= 253 && HOST_RE.test(pattern);
}

/** True when protection is disabled for this hostname. */
export function isWhitelisted(hostname: string, whitelist: readonly string[]): boolean {
  const host = hostname.toLowerCase().replace(/\.$/, "");
  for (const raw of whitelist) {
    const p = raw.toLowerCase();
    if (p.startsWith("*.")) {
      const suffix = p.slice(2);
      if (host === suffix || host.endsWith("." + suffix)) return true;
    } else if (host === p) {
      return true;
    }
  }
  return false;
}

function num(v: unknown, fallback: number, lo: number, hi: number): number {
  const n = typeof v === "number" && Number.isFinite(v) ? v : fallback;
  return Math.min(hi, Math.max(lo, n));
}

/** Coerce an arbitrary stored blob into valid settings. */
export function sanitizeSettings(raw: unknown): ExtensionSettings {
  if (typeof raw !== "object" || raw === null) return { ...DEFAULT_SETTINGS };
  const r = raw as Record<string, unknown>;
  const d = DEFAULT_SETTINGS;

  const whitelist = Array.isArray(r.whitelist)
    ? r.whitelist.filter((p): p is string => typeof p === "string" && isValidPattern(p))
    : [...d.whitelist];

  const sigma_mode: SigmaMode = r.sigma_mode === "fixed" ? "fixed" : "uniform";
  const distribution: Distribution =
    r.distribution === "uniform_radius" ? "uniform_radius" : "gaussian_radius";

  let low = num(r.low, d.low, 0, 1000);
  let high = num(r.high, d.high, 0, 1000);
  if (high < low) [low, high] = [high, low];

  return {
    version: SETTINGS_VERSION,
    enabled: typeof r.enabled === "boolean" ? r.enabled : d.enabled,
    whitelist,
    sigma_mode,
    sigma: num(r.sigma, d.sigma, 0, 1000),
    low,
    high,
    events_per_gap: Math.round(num(r.events_per_gap, d.events_per_gap, 1, 10)),
    distribution,
    recorder_mode: typeof r.recorder_mode === "boolean" ? r.recorder_mode : d.recorder_mode,
    poll_interval_ms: Math.round(num(r.poll_interval_ms, d.poll_interval_ms, 20, 5000)),
  };
}

/** Minimal async key-value store; chrome.storage.sync satisfies it. */
export interface SettingsStore {
  get(key: string): Promise<Record<string, unknown>>;
  set(items: Record<string, unknown>): Promise<void>;
}

export async function loadSettings(store: SettingsStore): Promise<ExtensionSettings> {
  const items = await store.get(STORAGE_KEY);
  return sanitizeSettings(items[STORAGE_KEY]);
}

export async function saveSettings(
  store: SettingsStore,
  settings: ExtensionSettings,
): Promise<void> {
  await store.set({ [STORAGE_KEY]: sanitizeSettings(settings) });
}
