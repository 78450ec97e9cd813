/** Wire types for the monitor's JSON bridge, with strict validation on
 * both directions: outbound commands are checked before send, inbound
 * events are parsed into a closed union (anything else is reported as
 * ignored-by-name, never silently dropped). */

export const MAX_READMEM = 4096;
export const MAX_DISASM = 64;

export type Command =
  | { cmd: "continue" }
  | { cmd: "step" }
  | { cmd: "pause" }
  | { cmd: "reset" }
  | { cmd: "setbp"; addr: number }
  | { cmd: "clearbp"; addr: number }
  | { cmd: "readmem"; addr: number; len: number }
  | { cmd: "writemem"; addr: number; bytes: string }
  | { cmd: "disasm"; addr: number; count: number };

export interface Regs {
  r0: number; r1: number; r2: number; r3: number;
  r4: number; r5: number; r6: number; r7: number;
  pc: number; flags: number; mode: "user" | "supv";
}

export interface DisasmLine { addr: number; text: string; }

export type BridgeEvent =
  | { event: "stopped"; reason: string; pc: number }
  | { event: "state"; regs: Regs }
  | { event: "mem"; addr: number; bytes: string }
  | { event: "disasm"; lines: DisasmLine[] }
  | { event: "serial"; data: string }
  | { event: "error"; message: string }
  | { event: "bp"; addr: number; set: boolean };

export type Parsed =
  | { kind: "event"; ev: BridgeEvent }
  | { kind: "ignored"; name: string }
  | { kind: "garbage"; detail: string };

const U32_MAX = 0xffff_ffff;

function isU32(x: unknown): x is number {
  return typeof x === "number" && Number.isInteger(x) && x >= 0 && x <= U32_MAX;
}

const HEX_RE = /^(?:[0-9a-f]{2})+$/;

/** Throws on schema violations; returns the serialized message. */
export function encodeCommand(c: Command): string {
  switch (c.cmd) {
    case "continue":
    case "step":
    case "pause":
    case "reset":
      break;
    case "setbp":
    case "clearbp":
      if (!isU32(c.addr)) throw new Error(`bad addr in ${c.cmd}`);
      break;
    case "readmem":
      if (!isU32(c.addr)) throw new Error("bad addr in readmem");
      if (!isU32(c.len) || c.len === 0 || c.len > MAX_READMEM)
        throw new Error(`readmem len must be 1..${MAX_READMEM}`);
      break;
    case "writemem":
      if (!isU32(c.addr)) throw new Error("bad addr in writemem");
      if (typeof c.bytes !== "string" || !HEX_RE.test(c.bytes))
        throw new Error("writemem bytes must be lowercase hex pairs");
      break;
    case "disasm":
      if (!isU32(c.addr)) throw new Error("bad addr in disasm");
      if (!isU32(c.count) || c.count === 0 || c.count > MAX_DISASM)
        throw new Error(`disasm count must be 1..${MAX_DISASM}`);
      break;
    default: {
      const never: never = c;
      throw new Error(`unknown command ${JSON.stringify(never)}`);
    }
  }
  return JSON.stringify(c);
}

function isRegs(x: unknown): x is Regs {
  if (typeof x !== "object" || x === null) return false;
  const r = x as Record<string, unknown>;
  for (let i = 0; i < 8; i++) if (!isU32(r[`r${i}`])) return false;
  return isU32(r.pc) && isU32(r.flags) && (r.mode === "user" || r.mode === "supv");
}

export function parseEvent(raw: string): Parsed {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return { kind: "garbage", detail: "not JSON" };
  }
  if (typeof msg !== "object" || msg === null || !("event" in msg))
    return { kind: "garbage", detail: "no event field" };
  const m = msg as Record<string, unknown>;
  switch (m.event) {
    case "stopped":
      if (typeof m.reason === "string" && isU32(m.pc))
        return { kind: "event", ev: { event: "stopped", reason: m.reason, pc: m.pc } };
      break;
    case "state":
      if (isRegs(m.regs))
        return { kind: "event", ev: { event: "state", regs: m.regs } };
      break;
    case "mem":
      if (isU32(m.addr) && typeof m.bytes === "string"
          && (m.bytes === "" || HEX_RE.test(m.bytes)))
        return { kind: "event", ev: { event: "mem", addr: m.addr, bytes: m.bytes } };
      break;
    case "disasm":
      if (Array.isArray(m.lines) && m.lines.every(
          (l: unknown) => typeof l === "object" && l !== null
            && isU32((l as DisasmLine).addr)
            && typeof (l as DisasmLine).text === "string"))
        return { kind: "event", ev: { event: "disasm", lines: m.lines as DisasmLine[] } };
      break;
    case "serial":
      if (typeof m.data === "string")
        return { kind: "event", ev: { event: "serial", data: m.data } };
      break;
    case "error":
      if (typeof m.message === "string")
        return { kind: "event", ev: { event: "error", message: m.message } };
      break;
    case "bp":
      if (isU32(m.addr) && typeof m.set === "boolean")
        return { kind: "event", ev: { event: "bp", addr: m.addr, set: m.set } };
      break;
    default:
      return { kind: "ignored", name: String(m.event) };
  }
  return { kind: "garbage", detail: `malformed ${String(m.event)} event` };
}

export function hexAddr(x: number): string {
  return "0x" + x.toString(16).padStart(8, "0");
}
