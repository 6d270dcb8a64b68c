/** Minimal ambient typings for the extension APIs this project touches. */

declare namespace chrome {
  namespace storage {
    interface StorageArea {
      get(keys: string | string[] | null, cb: (items: Record<string, unknown>) => void): void;
      set(items: Record<string, unknown>, cb?: () => void): void;
    }
    const sync: StorageArea;
    const local: StorageArea;
    interface StorageChange {
      oldValue?: unknown;
      newValue?: unknown;
    }
    const onChanged: {
      addListener(
        cb: (changes: Record<string, StorageChange>, area: string) => void,
      ): void;
    };
  }

  namespace runtime {
    const lastError: { message?: string } | undefined;
    function sendMessage(message: unknown, cb?: (response: unknown) => void): void;
    const onMessage: {
      addListener(
        cb: (
          message: unknown,
          sender: unknown,
          sendResponse: (response?: unknown) => void,
        ) => boolean | void,
      ): void;
    };
    const onInstalled: { addListener(cb: () => void): void };
  }

  namespace tabs {
    interface Tab {
      id?: number;
    }
    function query(info: { active: boolean; currentWindow: boolean }, cb: (tabs: Tab[]) => void): void;
    function sendMessage(tabId: number, message: unknown, cb?: (response: unknown) => void): void;
  }
}
