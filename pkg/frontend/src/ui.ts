/** DOM layer: renders the ConsoleSession into panels and wires the
 * controls.  All state lives in the session; this file only paints. */

import { hexAddr } from "./protocol.js";
import { ConsoleSession, bytesToHex } from "./session.js";

const MEM_PAGE = 256;          // bytes per memory viewport page
const MEM_ROW = 16;
const DISASM_COUNT = 24;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, cls?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

const wsUrl = `ws://${location.host}/ws`;
const session = new ConsoleSession(
  wsUrl,
  (url) => new WebSocket(url) as unknown as import("./session.js").SocketLike,
  (fn, ms) => setTimeout(fn, ms),
  render,
);

let memBase = 0x100;
let disasmBase = 0x100;
let followPc = true;

function refreshViews(): void {
  if (!session.connected) return;
  session.readMem(memBase, MEM_PAGE);
  session.requestDisasm(disasmBase, DISASM_COUNT);
}

function render(): void {
  renderBanner();
  renderRegs();
  renderDisasm();
  renderMem();
  renderBreakpoints();
  renderSerial();
  renderControls();
}

function renderBanner(): void {
  const banner = $("banner");
  banner.className = `banner ${session.conn}`;
  const bits = [`connection: ${session.conn}`];
  if (!session.running && session.stopReason)
    bits.push(`stopped: ${session.stopReason} @ ${hexAddr(session.stopPc)}`);
  if (session.running) bits.push("guest running");
  if (session.lastError) bits.push(`error: ${session.lastError}`);
  banner.textContent = bits.join("  |  ");
  ($("retry") as HTMLButtonElement).style.display =
    session.conn === "closed" ? "inline" : "none";
}

function renderRegs(): void {
  const table = $("regs");
  table.textContent = "";
  if (!session.regs) return;
  const regs = session.regs;
  const names = ["r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7",
                 "pc", "flags"] as const;
  for (const name of names) {
    const row = el("tr");
    row.append(el("td", "regname", name),
               el("td", "regval", hexAddr(regs[name])));
    table.append(row);
  }
  const row = el("tr");
  row.append(el("td", "regname", "mode"), el("td", "regval", regs.mode));
  table.append(row);
}

function renderDisasm(): void {
  const box = $("disasm");
  box.textContent = "";
  for (const line of session.disasm) {
    const div = el("div", "dline");
    if (!session.running && line.addr === (session.regs?.pc ?? -1))
      div.classList.add("pc");
    if (session.breakpoints.has(line.addr)) div.classList.add("bp");
    div.textContent = `${hexAddr(line.addr)}  ${line.text}`;
    div.onclick = () => {
      if (session.breakpoints.has(line.addr)) session.clearBreakpoint(line.addr);
      else session.setBreakpoint(line.addr);
    };
    box.append(div);
  }
}

function renderMem(): void {
  const box = $("mem");
  box.textContent = "";
  const bytes = session.memBytes;
  if (!bytes) return;
  for (let off = 0; off < bytes.length; off += MEM_ROW) {
    const row = el("div", "mrow");
    row.append(el("span", "maddr", hexAddr(session.memAddr + off)));
    for (let i = 0; i < MEM_ROW && off + i < bytes.length; i++) {
      const addr = session.memAddr + off + i;
      const cell = el("span", "mbyte",
                      bytes[off + i]!.toString(16).padStart(2, "0"));
      cell.title = hexAddr(addr);
      cell.onclick = () => editByte(addr, bytes[off + i]!);
      row.append(cell);
    }
    box.append(row);
  }
}

function editByte(addr: number, old: number): void {
  const raw = prompt(`byte at ${hexAddr(addr)} (hex)`,
                     old.toString(16).padStart(2, "0"));
  if (raw === null) return;
  const v = parseInt(raw.trim(), 16);
  if (Number.isNaN(v) || v < 0 || v > 0xff) {
    session.lastError = `not a byte: ${raw}`;
    render();
    return;
  }
  session.writeMemByte(addr, v);
}

function renderBreakpoints(): void {
  const list = $("bps");
  list.textContent = "";
  for (const [addr, label] of [...session.breakpoints].sort((a, b) => a[0] - b[0])) {
    const row = el("div", "bprow");
    row.append(el("span", "", `${hexAddr(addr)}  ${label}`));
    const btn = el("button", "", "clear");
    btn.onclick = () => session.clearBreakpoint(addr);
    row.append(btn);
    list.append(row);
  }
}

function renderSerial(): void {
  const box = $("serial");
  if (box.textContent !== session.serial) {
    box.textContent = session.serial;
    box.scrollTop = box.scrollHeight;
  }
}

function renderControls(): void {
  const enabled = session.controlsEnabled;
  for (const [id, need] of [["step", !session.running], ["cont", !session.running],
                            ["pause", session.running], ["reset", true]] as const) {
    ($(id) as HTMLButtonElement).disabled = !(enabled && need);
  }
}

function wire(): void {
  $("step").onclick = () => session.step();
  $("cont").onclick = () => session.continue_();
  $("pause").onclick = () => session.pause();
  $("reset").onclick = () => session.reset();
  $("retry").onclick = () => session.connect();
  $("memgo").onclick = () => {
    const raw = ($("memaddr") as HTMLInputElement).value.trim();
    const v = parseInt(raw, 16);
    if (!Number.isNaN(v)) {
      memBase = v & ~0xf;
      session.readMem(memBase, MEM_PAGE);
    }
  };
  $("memprev").onclick = () => {
    memBase = Math.max(0, memBase - MEM_PAGE);
    session.readMem(memBase, MEM_PAGE);
  };
  $("memnext").onclick = () => {
    memBase += MEM_PAGE;
    session.readMem(memBase, MEM_PAGE);
  };
  $("dgo").onclick = () => {
    const raw = ($("daddr") as HTMLInputElement).value.trim();
    const v = parseInt(raw, 16);
    if (!Number.isNaN(v)) {
      followPc = false;
      disasmBase = v & ~0x3;
      session.requestDisasm(disasmBase, DISASM_COUNT);
    }
  };
  $("dfollow").onclick = () => {
    followPc = true;
    refreshViews();
  };
}

let lastSeenStop = -1;
const origOnChange = session.onChange;
session.onChange = () => {
  // after every fresh stop, re-pull the viewports so panels track the guest
  if (!session.running && session.stopPc !== lastSeenStop && session.connected) {
    lastSeenStop = session.stopPc;
    if (followPc) disasmBase = Math.max(0, session.stopPc - 16);
    refreshViews();
  }
  origOnChange();
};

wire();
session.connect();

// restore the viewport from /state after reconnects
fetch("/state").then((r) => r.json()).then(() => refreshViews()).catch(() => {});
