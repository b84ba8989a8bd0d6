/** Browser WebSocket bound to the Transport interface used by Session. */

import type { Transport } from "./session.js";

export class WsTransport implements Transport {
  onMessage: ((data: Uint8Array) => void) | null = null;
  onOpen: (() => void) | null = null;
  onClose: (() => void) | null = null;

  private readonly ws: WebSocket;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.binaryType = "arraybuffer";
    this.ws.onopen = () => this.onOpen?.();
    this.ws.onmessage = (ev: MessageEvent) => {
      if (ev.data instanceof ArrayBuffer) this.onMessage?.(new Uint8Array(ev.data));
    };
    this.ws.onclose = () => this.onClose?.();
    // an error is always followed by close, which is the signal we act on
    this.ws.onerror = () => {};
  }

  send(data: Uint8Array): void {
    this.ws.send(data);
  }

  close(): void {
    this.ws.close();
  }
}
