import { describe, expect, it } from "vitest";

import { encodeCommand, parseEvent } from "../src/protocol.js";
import { ConsoleSession, SocketLike, bytesToHex, hexToBytes } from "../src/session.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  send(data: string) { this.sent.push(data); }
  close() { this.onclose?.(); }
  open() { this.onopen?.(); }
  push(ev: object) { this.onmessage?.({ data: JSON.stringify(ev) }); }
}

function makeSession() {
  const sockets: FakeSocket[] = [];
  const timers: Array<() => void> = [];
  const session = new ConsoleSession(
    "ws://test/ws",
    () => { const s = new FakeSocket(); sockets.push(s); return s; },
    (fn) => { timers.push(fn); },
  );
  session.connect();
  sockets[0]!.open();
  return { session, sockets, timers };
}

const REGS = {
  r0: 0, r1: 1, r2: 2, r3: 3, r4: 4, r5: 5, r6: 6, r7: 7,
  pc: 0x104, flags: 4, mode: "supv",
};

describe("protocol validation", () => {
  it("accepts every well-formed command", () => {
    expect(() => encodeCommand({ cmd: "continue" })).not.toThrow();
    expect(() => encodeCommand({ cmd: "setbp", addr: 512 })).not.toThrow();
    expect(() => encodeCommand({ cmd: "readmem", addr: 0, len: 4096 })).not.toThrow();
    expect(() => encodeCommand({ cmd: "writemem", addr: 1, bytes: "ab" })).not.toThrow();
    expect(() => encodeCommand({ cmd: "disasm", addr: 0, count: 64 })).not.toThrow();
  });

  it("rejects schema violations before they reach the wire", () => {
    expect(() => encodeCommand({ cmd: "readmem", addr: 0, len: 4097 })).toThrow();
    expect(() => encodeCommand({ cmd: "readmem", addr: -1, len: 4 })).toThrow();
    expect(() => encodeCommand({ cmd: "disasm", addr: 0, count: 65 })).toThrow();
    expect(() => encodeCommand({ cmd: "writemem", addr: 0, bytes: "XY" })).toThrow();
    expect(() => encodeCommand({ cmd: "setbp", addr: 2 ** 40 })).toThrow();
  });

  it("parses known events and names unknown ones", () => {
    expect(parseEvent(JSON.stringify({ event: "serial", data: "x" })))
      .toEqual({ kind: "event", ev: { event: "serial", data: "x" } });
    expect(parseEvent(JSON.stringify({ event: "telemetry", q: 1 })))
      .toEqual({ kind: "ignored", name: "telemetry" });
    expect(parseEvent("{").kind).toBe("garbage");
    expect(parseEvent(JSON.stringify({ event: "mem", addr: 1, bytes: "zz" })).kind)
      .toBe("garbage");
  });
});

describe("session view-model", () => {
  it("renders register values verbatim from state events", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "state", regs: REGS });
    expect(session.regs).toEqual(REGS);
  });

  it("tracks stop reason and pc", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "stopped", reason: "breakpoint", pc: 0x138 });
    expect(session.running).toBe(false);
    expect(session.stopReason).toBe("breakpoint");
    expect(session.stopPc).toBe(0x138);
  });

  it("memory panel equals the last mem event exactly", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "mem", addr: 0x2000, bytes: "a1b2c3d4" });
    expect(session.memAddr).toBe(0x2000);
    expect(bytesToHex(session.memBytes!)).toBe("a1b2c3d4");
  });

  it("disables run controls while a step is outstanding", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "stopped", reason: "pause", pc: 0x100 });
    session.step();
    expect(session.pending).toBe("step");
    expect(session.controlsEnabled).toBe(false);
    session.step();    // second step refused locally
    expect(session.lastError).toContain("outstanding");
    expect(sockets[0]!.sent.filter((m) => m.includes("step")).length).toBe(1);
    sockets[0]!.push({ event: "stopped", reason: "step", pc: 0x104 });
    expect(session.pending).toBeNull();
    expect(session.controlsEnabled).toBe(true);
  });

  it("continue flips to running without an ack", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "stopped", reason: "pause", pc: 0x100 });
    session.continue_();
    expect(session.running).toBe(true);
    expect(session.pending).toBeNull();   // pause stays available
  });

  it("errors clear the pending command and surface inline", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "stopped", reason: "pause", pc: 0x100 });
    session.pause();
    sockets[0]!.push({ event: "error", message: "exists" });
    expect(session.pending).toBeNull();
    expect(session.lastError).toBe("exists");
  });

  it("collects serial output and breakpoint rows", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "serial", data: "he" });
    sockets[0]!.push({ event: "serial", data: "llo" });
    expect(session.serial).toBe("hello");
    session.setBreakpoint(0x200);
    sockets[0]!.push({ event: "bp", addr: 0x200, set: true });
    expect([...session.breakpoints.keys()]).toEqual([0x200]);
    // the label request went out; a single-line disasm fills the row
    sockets[0]!.push({ event: "disasm", lines: [{ addr: 0x200, text: "movi r1, 5" }] });
    expect(session.breakpoints.get(0x200)).toBe("movi r1, 5");
    expect(session.disasm).toEqual([]);   // viewport untouched by label fill
    sockets[0]!.push({ event: "bp", addr: 0x200, set: false });
    expect(session.breakpoints.size).toBe(0);
  });

  it("ignores unknown events by name without crashing", () => {
    const { session, sockets } = makeSession();
    sockets[0]!.push({ event: "fancy-new-thing", data: 1 });
    expect(session.ignoredEvents).toEqual(["fancy-new-thing"]);
  });

  it("reconnects with backoff after a drop", () => {
    const { session, sockets, timers } = makeSession();
    sockets[0]!.close();
    expect(session.conn).toBe("retrying");
    expect(timers.length).toBe(1);
    timers[0]!();                       // fire the backoff timer
    expect(sockets.length).toBe(2);     // a fresh socket was opened
    sockets[1]!.open();
    expect(session.conn).toBe("open");
  });

  it("hex helpers round-trip", () => {
    const bytes = new Uint8Array([0, 1, 0xab, 0xff]);
    expect(hexToBytes(bytesToHex(bytes))).toEqual(bytes);
  });
});
