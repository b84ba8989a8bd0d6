/**
 * Minimal RFC 6455 client over a raw TCP socket, shaped like the browser
 * Transport.  Node 20 ships no WebSocket global, and the integration tests
 * must exercise the exact browser-facing binding: HTTP upgrade, masked
 * client frames, unmasked server frames, ping/close control frames.
 */

import { createHash, randomBytes } from "node:crypto";
import { Socket, connect } from "node:net";

import type { Transport } from "../src/session.js";

const GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

const OP_CONT = 0x0;
const OP_BINARY = 0x2;
const OP_CLOSE = 0x8;
const OP_PING = 0x9;
const OP_PONG = 0xa;

function maskedFrame(opcode: number, payload: Uint8Array): Buffer {
  const head: number[] = [0x80 | opcode];
  const n = payload.length;
  if (n < 126) head.push(0x80 | n);
  else if (n < 65536) head.push(0x80 | 126, (n >> 8) & 0xff, n & 0xff);
  else {
    head.push(0x80 | 127);
    for (let i = 7; i >= 0; i--) head.push(Number((BigInt(n) >> BigInt(8 * i)) & 0xffn));
  }
  const key = randomBytes(4);
  const body = Buffer.from(payload);
  for (let i = 0; i < body.length; i++) body[i] = body[i]! ^ key[i % 4]!;
  return Buffer.concat([Buffer.from(head), key, body]);
}

export class NodeWsTransport implements Transport {
  onMessage: ((data: Uint8Array) => void) | null = null;
  onOpen: (() => void) | null = null;
  onClose: (() => void) | null = null;

  private readonly sock: Socket;
  private buf = Buffer.alloc(0);
  private upgraded = false;
  private closedFired = false;
  private closeSent = false;
  private fragments: Buffer[] = [];
  private readonly key = randomBytes(16).toString("base64");

  constructor(host: string, port: number) {
    this.sock = connect(port, host);
    this.sock.setNoDelay(true);
    this.sock.on("connect", () => {
      this.sock.write(
        `GET / HTTP/1.1\r\n` +
          `Host: ${host}:${port}\r\n` +
          `Upgrade: websocket\r\n` +
          `Connection: Upgrade\r\n` +
          `Sec-WebSocket-Key: ${this.key}\r\n` +
          `Sec-WebSocket-Version: 13\r\n\r\n`,
      );
    });
    this.sock.on("data", (chunk) => this.onData(chunk));
    this.sock.on("error", () => {}); // 'close' always follows
    this.sock.on("close", () => this.fireClose());
  }

  private fireClose(): void {
    if (this.closedFired) return;
    this.closedFired = true;
    this.onClose?.();
  }

  private onData(chunk: Buffer): void {
    this.buf = Buffer.concat([this.buf, chunk]);
    if (!this.upgraded) {
      const end = this.buf.indexOf("\r\n\r\n");
      if (end < 0) return;
      const head = this.buf.subarray(0, end).toString("latin1");
      this.buf = this.buf.subarray(end + 4);
      const status = head.split("\r\n", 1)[0] ?? "";
      const accept = /^sec-websocket-accept:\s*(.+)$/im.exec(head)?.[1]?.trim();
      const want = createHash("sha1").update(this.key + GUID).digest("base64");
      if (!status.includes(" 101 ") || accept !== want) {
        this.sock.destroy();
        return;
      }
      this.upgraded = true;
      this.onOpen?.();
    }
    this.parseFrames();
  }

  private parseFrames(): void {
    for (;;) {
      if (this.buf.length < 2) return;
      const b0 = this.buf[0]!;
      const b1 = this.buf[1]!;
      const fin = (b0 & 0x80) !== 0;
      const opcode = b0 & 0x0f;
      const masked = (b1 & 0x80) !== 0;
      let len = b1 & 0x7f;
      let at = 2;
      if (len === 126) {
        if (this.buf.length < 4) return;
        len = this.buf.readUInt16BE(2);
        at = 4;
      } else if (len === 127) {
        if (this.buf.length < 10) return;
        len = Number(this.buf.readBigUInt64BE(2));
        at = 10;
      }
      const maskLen = masked ? 4 : 0;
      if (this.buf.length < at + maskLen + len) return;
      let payload = this.buf.subarray(at + maskLen, at + maskLen + len);
      if (masked) {
        const key = this.buf.subarray(at, at + 4);
        payload = Buffer.from(payload);
        for (let i = 0; i < payload.length; i++) payload[i] = payload[i]! ^ key[i % 4]!;
      }
      this.buf = this.buf.subarray(at + maskLen + len);
      this.handleFrame(fin, opcode, Buffer.from(payload));
    }
  }

  private handleFrame(fin: boolean, opcode: number, payload: Buffer): void {
    switch (opcode) {
      case OP_PING:
        this.sock.write(maskedFrame(OP_PONG, payload));
        return;
      case OP_PONG:
        return;
      case OP_CLOSE:
        if (!this.closeSent) {
          this.closeSent = true;
          this.sock.write(maskedFrame(OP_CLOSE, payload.subarray(0, 2)));
        }
        this.sock.end();
        return;
      case OP_BINARY:
        if (fin) this.onMessage?.(new Uint8Array(payload));
        else this.fragments = [payload];
        return;
      case OP_CONT:
        this.fragments.push(payload);
        if (fin) {
          const whole = Buffer.concat(this.fragments);
          this.fragments = [];
          this.onMessage?.(new Uint8Array(whole));
        }
        return;
      default:
        return; // text frames never appear on this protocol
    }
  }

  send(data: Uint8Array): void {
    if (this.upgraded && !this.closeSent) this.sock.write(maskedFrame(OP_BINARY, data));
  }

  close(): void {
    if (this.upgraded && !this.closeSent) {
      this.closeSent = true;
      this.sock.write(maskedFrame(OP_CLOSE, Buffer.from([0x03, 0xe8]))); // 1000
    }
    this.sock.end();
    // do not wait for the close echo forever
    setTimeout(() => this.sock.destroy(), 500).unref();
  }
}
