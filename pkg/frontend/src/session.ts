/** Session view-model: everything the console displays, plus the
 * connection state machine.  The transport and timers are injected so
 * the whole thing unit-tests without a browser or a server.
 *
 * Displayed register values are always the last `state` event verbatim;
 * the memory panel only ever shows bytes from `mem` events.  At most one
 * run-control command is outstanding: controls stay disabled until its
 * matching event arrives. */

import {
  BridgeEvent, Command, DisasmLine, Regs, encodeCommand, parseEvent,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;
export type Scheduler = (fn: () => void, ms: number) => void;

export type ConnState = "connecting" | "open" | "closed" | "retrying";

const RUN_CONTROL = new Set(["continue", "step", "pause", "reset"]);
const BACKOFF_MS = [500, 1000, 2000, 5000, 10000];

export class ConsoleSession {
  conn: ConnState = "closed";
  running = true;
  stopReason = "";
  stopPc = 0;
  regs: Regs | null = null;
  breakpoints = new Map<number, string>();   // addr -> disassembled target
  memAddr = 0;
  memBytes: Uint8Array | null = null;
  disasm: DisasmLine[] = [];
  serial = "";
  lastError = "";
  ignoredEvents: string[] = [];
  /** outstanding run-control command; controls disabled while non-null */
  pending: string | null = null;

  private sock: SocketLike | null = null;
  private retries = 0;
  private closedByUser = false;
  private bpPending = new Set<number>();
  private bpLabelPending = new Set<number>();

  constructor(
    private url: string,
    private makeSocket: SocketFactory,
    private schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
    public onChange: () => void = () => {},
  ) {}

  connect(): void {
    this.closedByUser = false;
    this.conn = "connecting";
    this.onChange();
    const sock = this.makeSocket(this.url);
    this.sock = sock;
    sock.onopen = () => {
      this.conn = "open";
      this.retries = 0;
      this.lastError = "";
      this.onChange();
    };
    sock.onmessage = (ev) => this.handleRaw(String(ev.data));
    sock.onerror = () => {
      this.lastError = "connection error";
      this.onChange();
    };
    sock.onclose = () => {
      this.sock = null;
      this.pending = null;
      if (this.closedByUser) {
        this.conn = "closed";
        this.onChange();
        return;
      }
      this.conn = "retrying";
      this.onChange();
      const delay = BACKOFF_MS[Math.min(this.retries++, BACKOFF_MS.length - 1)]!;
      this.schedule(() => {
        if (!this.closedByUser) this.connect();
      }, delay);
    };
  }

  close(): void {
    this.closedByUser = true;
    this.sock?.close();
    this.conn = "closed";
    this.onChange();
  }

  get connected(): boolean {
    return this.conn === "open";
  }

  get controlsEnabled(): boolean {
    return this.connected && this.pending === null;
  }

  // --- commands -------------------------------------------------------------

  send(c: Command): void {
    if (!this.sock || this.conn !== "open") {
      this.lastError = "not connected";
      this.onChange();
      return;
    }
    if (RUN_CONTROL.has(c.cmd)) {
      if (this.pending !== null) {
        this.lastError = `'${this.pending}' still outstanding`;
        this.onChange();
        return;
      }
      // `continue` has no immediate ack: the guest simply runs, and the
      // next event is whatever stop comes later.  Everything else stays
      // pending until its matching event.
      if (c.cmd === "continue") {
        this.running = true;
      } else {
        this.pending = c.cmd;
      }
    }
    this.sock.send(encodeCommand(c));   // throws on schema violations
    this.onChange();
  }

  step(): void { this.send({ cmd: "step" }); }
  continue_(): void { this.send({ cmd: "continue" }); }
  pause(): void { this.send({ cmd: "pause" }); }
  reset(): void { this.send({ cmd: "reset" }); }

  setBreakpoint(addr: number): void {
    this.bpPending.add(addr);
    this.send({ cmd: "setbp", addr });
  }

  clearBreakpoint(addr: number): void {
    this.send({ cmd: "clearbp", addr });
  }

  readMem(addr: number, len: number): void {
    this.send({ cmd: "readmem", addr, len });
  }

  /** Edit bytes, then re-read the affected range so the panel reflects
   * the guest's truth rather than our optimism. */
  writeMemByte(addr: number, value: number): void {
    this.send({ cmd: "writemem", addr, bytes: value.toString(16).padStart(2, "0") });
    this.readMem(this.memAddr, this.memBytes ? this.memBytes.length : 256);
  }

  requestDisasm(addr: number, count: number): void {
    this.send({ cmd: "disasm", addr, count });
  }

  // --- inbound --------------------------------------------------------------

  private handleRaw(raw: string): void {
    const parsed = parseEvent(raw);
    if (parsed.kind === "ignored") {
      if (!this.ignoredEvents.includes(parsed.name))
        this.ignoredEvents.push(parsed.name);
      return;
    }
    if (parsed.kind === "garbage") {
      this.lastError = `bad message from bridge: ${parsed.detail}`;
      this.onChange();
      return;
    }
    this.handleEvent(parsed.ev);
  }

  private handleEvent(ev: BridgeEvent): void {
    switch (ev.event) {
      case "stopped":
        this.running = ev.reason === "running";
        this.stopReason = ev.reason;
        this.stopPc = ev.pc;
        this.pending = null;
        break;
      case "state":
        this.regs = ev.regs;
        break;
      case "mem":
        this.memAddr = ev.addr;
        this.memBytes = hexToBytes(ev.bytes);
        break;
      case "disasm": {
        const first = ev.lines[0];
        if (ev.lines.length === 1 && first && this.bpLabelPending.delete(first.addr)) {
          // label fill for a breakpoint row, not a viewport update
          if (this.breakpoints.has(first.addr))
            this.breakpoints.set(first.addr, first.text);
          break;
        }
        this.disasm = ev.lines;
        for (const line of ev.lines) {
          if (this.breakpoints.has(line.addr))
            this.breakpoints.set(line.addr, line.text);
        }
        break;
      }
      case "serial":
        this.serial += ev.data;
        break;
      case "error":
        this.lastError = ev.message;
        if (this.pending !== null) this.pending = null;
        break;
      case "bp":
        if (ev.set) {
          this.breakpoints.set(ev.addr, this.breakpoints.get(ev.addr) ?? "");
          if (this.bpPending.delete(ev.addr)) {
            this.bpLabelPending.add(ev.addr);
            this.requestDisasm(ev.addr, 1);
          }
        } else {
          this.breakpoints.delete(ev.addr);
        }
        break;
      default: {
        const never: never = ev;
        void never;
      }
    }
    this.onChange();
  }
}

export function hexToBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++)
    out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}
