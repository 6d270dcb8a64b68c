/** Service worker: seed defaults on install so the options page always
 * finds a valid settings blob. */

import { DEFAULT_SETTINGS, STORAGE_KEY } from "./settings.js";

chrome.runtime.onInstalled.addListener(() => {
  chrome.storage.sync.get(STORAGE_KEY, (items) => {
    if (items[STORAGE_KEY] === undefined) {
      chrome.storage.sync.set({ [STORAGE_KEY]: DEFAULT_SETTINGS });
    }
  });
});
