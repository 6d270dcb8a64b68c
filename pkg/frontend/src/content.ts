/** Content script: live cloaking plus the optional session recorder.
 *
 * Every handler body is wrapped so a failure is logged to the extension
 * console and never propagates into page scripts.  Genuine events are
 * never suppressed or altered; the script only adds untrusted synthetic
 * mousemove dispatches after each genuine one.
 */

import { Cloaker, noiseParams, platformSeed } from "./cloaker.js";
import { PortableRng } from "./noise.js";
import {
  DEFAULT_SETTINGS,
  isWhitelisted,
  sanitizeSettings,
  STORAGE_KEY,
} from "./settings.js";
import type { ExtensionSettings } from "./settings.js";
import { elementPath, SessionRecorder } from "./recorder.js";
import type { ClickInfo, PointerState, RecorderHost } from "./recorder.js";

const CLOAK_MARK = "__cursorCloakSynthetic";

let settings: ExtensionSettings = { ...DEFAULT_SETTINGS };
let cloaker: Cloaker | null = null;
let recorder: SessionRecorder | null = null;
let recorderHost: RecorderHost | null = null;

function refreshCloaker(): void {
  const active =
    settings.enabled && !isWhitelisted(location.hostname, settings.whitelist);
  cloaker = active
    ? new Cloaker(noiseParams(settings), new PortableRng(platformSeed()))
    : null;
}

function dispatchSynthetic(target: EventTarget, x: number, y: number): void {
  const synth = new MouseEvent("mousemove", {
    bubbles: true,
    cancelable: false,
    clientX: x,
    clientY: y,
    view: window,
  });
  (synth as unknown as Record<string, unknown>)[CLOAK_MARK] = true;
  target.dispatchEvent(synth);
}

function onMouseMove(ev: MouseEvent): void {
  try {
    if (cloaker === null) return;
    if (!ev.isTrusted) return;
    if ((ev as unknown as Record<string, unknown>)[CLOAK_MARK]) return;
    const target = ev.target ?? document;
    for (const [x, y] of cloaker.positionsFor(ev.clientX, ev.clientY)) {
      dispatchSynthetic(target, x, y);
    }
  } catch (err) {
    console.debug("cursor-cloak: dispatch failed", err);
  }
}

// ---------------------------------------------------------------------------
// recorder wiring

function domRecorderHost(): RecorderHost {
  let last: PointerState | null = null;
  const track = (ev: MouseEvent) => {
    if (ev.isTrusted) last = { x: ev.clientX, y: ev.clientY };
  };
  document.addEventListener("mousemove", track, { capture: true, passive: true });
  return {
    now: () => performance.now(),
    setInterval: (cb, ms) => window.setInterval(cb, ms),
    clearInterval: (id) => window.clearInterval(id),
    pointer: () => last,
    onClick: (cb: (info: ClickInfo) => void) => {
      const h = (ev: MouseEvent) => {
        if (!ev.isTrusted) return;
        cb({
          x: ev.clientX,
          y: ev.clientY,
          targetPath: elementPath(ev.target as HTMLElement | null),
        });
      };
      document.addEventListener("click", h, { capture: true, passive: true });
      return () => document.removeEventListener("click", h, { capture: true });
    },
    onScroll: (cb: (pos: PointerState) => void) => {
      const h = () => cb(last ?? { x: 0, y: 0 });
      window.addEventListener("scroll", h, { passive: true });
      return () => window.removeEventListener("scroll", h);
    },
    viewport: () => ({ width: window.innerWidth, height: window.innerHeight }),
  };
}

type RecorderMessage =
  | { type: "recorder-start" }
  | { type: "recorder-stop"; meta?: { gender?: string | null; age?: number | null } }
  | { type: "recorder-status" };

function handleMessage(
  message: unknown,
  sendResponse: (response?: unknown) => void,
): void {
  const msg = message as RecorderMessage;
  if (msg?.type === "recorder-start") {
    if (!settings.recorder_mode) {
      sendResponse({ ok: false, error: "enable the recorder in the extension options first" });
      return;
    }
    if (recorder === null || !recorder.running) {
      // fresh recorder per session so the current poll interval applies;
      // the DOM host is shared so its tracking listener exists only once
      recorderHost ??= domRecorderHost();
      recorder = new SessionRecorder(recorderHost, settings.poll_interval_ms);
      recorder.start();
    }
    sendResponse({ ok: true, running: true });
  } else if (msg?.type === "recorder-stop") {
    if (recorder === null || !recorder.running) {
      sendResponse({ ok: false, error: "recorder is not running" });
      return;
    }
    recorder.stop();
    const jsonl = recorder.toJsonl({
      id: `recorded-${Date.now()}`,
      query: location.hostname,
      gender: msg.meta?.gender ?? null,
      age: msg.meta?.age ?? null,
    });
    sendResponse({ ok: true, jsonl });
  } else if (msg?.type === "recorder-status") {
    sendResponse({ ok: true, running: recorder?.running ?? false });
  }
}

// ---------------------------------------------------------------------------
// bootstrap

function main(): void {
  document.addEventListener("mousemove", onMouseMove, {
    capture: true,
    passive: true,
  });

  chrome.storage.sync.get(STORAGE_KEY, (items) => {
    try {
      settings = sanitizeSettings(items[STORAGE_KEY]);
      refreshCloaker();
    } catch (err) {
      console.debug("cursor-cloak: settings load failed", err);
    }
  });

  chrome.storage.onChanged.addListener((changes, area) => {
    try {
      if (area !== "sync" || !(STORAGE_KEY in changes)) return;
      settings = sanitizeSettings(changes[STORAGE_KEY]?.newValue);
      refreshCloaker();
    } catch (err) {
      console.debug("cursor-cloak: settings update failed", err);
    }
  });

  chrome.runtime.onMessage.addListener((message, _sender, sendResponse) => {
    try {
      handleMessage(message, sendResponse);
    } catch (err) {
      console.debug("cursor-cloak: message handling failed", err);
      sendResponse({ ok: false, error: String(err) });
    }
    return false;
  });
}

main();
