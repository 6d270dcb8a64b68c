/** Options page: edit settings, steer the recorder on the active tab. */

import {
  isValidPattern,
  loadSettings,
  saveSettings,
  sanitizeSettings,
} from "./settings.js";
import type { ExtensionSettings, SettingsStore } from "./settings.js";

const store: SettingsStore = {
  get: (key) =>
    new Promise((resolve) => chrome.storage.sync.get(key, (items) => resolve(items))),
  set: (items) =>
    new Promise((resolve) => chrome.storage.sync.set(items, () => resolve())),
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

const enabled = el<HTMLInputElement>("enabled");
const whitelist = el<HTMLTextAreaElement>("whitelist");
const whitelistNote = el<HTMLElement>("whitelist-note");
const sigmaMode = el<HTMLSelectElement>("sigma-mode");
const sigmaFixed = el<HTMLInputElement>("sigma");
const sigmaLow = el<HTMLInputElement>("low");
const sigmaHigh = el<HTMLInputElement>("high");
const perGap = el<HTMLInputElement>("events-per-gap");
const distribution = el<HTMLSelectElement>("distribution");
const pollInterval = el<HTMLInputElement>("poll-interval");
const saveNote = el<HTMLElement>("save-note");
const recMode = el<HTMLInputElement>("rec-mode");
const recStart = el<HTMLButtonElement>("rec-start");
const recStop = el<HTMLButtonElement>("rec-stop");
const recNote = el<HTMLElement>("rec-note");
const recGender = el<HTMLSelectElement>("rec-gender");
const recAge = el<HTMLInputElement>("rec-age");

function render(s: ExtensionSettings): void {
  enabled.checked = s.enabled;
  whitelist.value = s.whitelist.join("\n");
  sigmaMode.value = s.sigma_mode;
  sigmaFixed.value = String(s.sigma);
  sigmaLow.value = String(s.low);
  sigmaHigh.value = String(s.high);
  perGap.value = String(s.events_per_gap);
  distribution.value = s.distribution;
  pollInterval.value = String(s.poll_interval_ms);
  recMode.checked = s.recorder_mode;
  sigmaFixed.disabled = s.sigma_mode !== "fixed";
  sigmaLow.disabled = s.sigma_mode !== "uniform";
  sigmaHigh.disabled = s.sigma_mode !== "uniform";
  // stop stays enabled so a running session can always be flushed
  recStart.disabled = !s.recorder_mode;
}

function collect(): ExtensionSettings {
  const lines = whitelist.value
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  const bad = lines.filter((l) => !isValidPattern(l));
  whitelistNote.textContent =
    bad.length > 0 ? `ignored invalid patterns: ${bad.join(", ")}` : "";
  return sanitizeSettings({
    enabled: enabled.checked,
    whitelist: lines.filter(isValidPattern),
    sigma_mode: sigmaMode.value,
    sigma: Number(sigmaFixed.value),
    low: Number(sigmaLow.value),
    high: Number(sigmaHigh.value),
    events_per_gap: Number(perGap.value),
    distribution: distribution.value,
    recorder_mode: recMode.checked,
    poll_interval_ms: Number(pollInterval.value),
  });
}

async function persist(): Promise<void> {
  const s = collect();
  await saveSettings(store, s);
  render(s);
  saveNote.textContent = "saved";
  setTimeout(() => (saveNote.textContent = ""), 1200);
}

function activeTab(): Promise<number | null> {
  return new Promise((resolve) =>
    chrome.tabs.query({ active: true, currentWindow: true }, (tabs) =>
      resolve(tabs[0]?.id ?? null),
    ),
  );
}

function messageTab(tabId: number, message: unknown): Promise<unknown> {
  return new Promise((resolve) =>
    chrome.tabs.sendMessage(tabId, message, (response) => {
      void chrome.runtime.lastError; // swallow "no receiver" into a null response
      resolve(response ?? null);
    }),
  );
}

async function startRecorder(): Promise<void> {
  const tab = await activeTab();
  if (tab === null) {
    recNote.textContent = "no active tab";
    return;
  }
  const res = (await messageTab(tab, { type: "recorder-start" })) as
    | { ok: boolean }
    | null;
  recNote.textContent = res?.ok ? "recording..." : "page has no recorder (reload it)";
}

async function stopRecorder(): Promise<void> {
  const tab = await activeTab();
  if (tab === null) {
    recNote.textContent = "no active tab";
    return;
  }
  const age = recAge.value === "" ? null : Number(recAge.value);
  const gender = recGender.value === "" ? null : recGender.value;
  const res = (await messageTab(tab, {
    type: "recorder-stop",
    meta: { gender, age },
  })) as { ok: boolean; jsonl?: string; error?: string } | null;
  if (!res?.ok || res.jsonl === undefined) {
    recNote.textContent = res?.error ?? "recorder did not respond";
    return;
  }
  const url = URL.createObjectURL(new Blob([res.jsonl], { type: "application/jsonl" }));
  const a = document.createElement("a");
  a.href = url;
  a.download = `cursor-session-${Date.now()}.jsonl`;
  a.click();
  URL.revokeObjectURL(url);
  recNote.textContent = "downloaded";
}

async function main(): Promise<void> {
  render(await loadSettings(store));
  for (const node of [enabled, sigmaMode, distribution, recMode]) {
    node.addEventListener("change", () => void persist());
  }
  for (const node of [whitelist, sigmaFixed, sigmaLow, sigmaHigh, perGap, pollInterval]) {
    node.addEventListener("change", () => void persist());
  }
  recStart.addEventListener("click", () => void startRecorder());
  recStop.addEventListener("click", () => void stopRecorder());
}

void main();
