/** Console acceptance against a live monitor running the transfer
 * workload: connect, plant a breakpoint, continue to it, step once
 * (pc + 4 on a non-branch), edit a memory byte through the bridge, and
 * confirm the byte through the independent RSP `m` command. */

import { spawn, ChildProcess } from "node:child_process";
import { connect as tcpConnect, Socket } from "node:net";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ConsoleSession, SocketLike } from "../src/session.js";

let child: ChildProcess;
let ports: { gdb: number; ws: number; bp_addr: number; entry: number };

beforeAll(async () => {
  child = spawn("python3", [new URL("live_monitor.py", import.meta.url).pathname],
                { stdio: ["ignore", "pipe", "inherit"] });
  ports = await new Promise((resolve, reject) => {
    let buf = "";
    child.stdout!.on("data", (d: Buffer) => {
      buf += d.toString();
      const nl = buf.indexOf("\n");
      if (nl >= 0) resolve(JSON.parse(buf.slice(0, nl)));
    });
    child.on("exit", (code) => reject(new Error(`monitor died: ${code}`)));
    setTimeout(() => reject(new Error("monitor start timeout")), 30000);
  });
}, 40000);

afterAll(() => {
  child?.kill();
});

function makeLiveSession(): Promise<ConsoleSession> {
  return new Promise((resolve, reject) => {
    const session = new ConsoleSession(
      `ws://127.0.0.1:${ports.ws}/ws`,
      (url) => new WebSocket(url) as unknown as SocketLike,
    );
    const timer = setTimeout(() => reject(new Error("ws connect timeout")), 15000);
    const prev = session.onChange;
    session.onChange = () => {
      prev();
      if (session.connected) {
        clearTimeout(timer);
        resolve(session);
      }
    };
    session.connect();
  });
}

function waitFor(session: ConsoleSession, pred: () => boolean,
                 what: string, ms = 15000): Promise<void> {
  return new Promise((resolve, reject) => {
    if (pred()) return resolve();
    const timer = setTimeout(
      () => reject(new Error(`timeout waiting for ${what}`)), ms);
    const prev = session.onChange;
    session.onChange = () => {
      prev();
      if (pred()) {
        clearTimeout(timer);
        session.onChange = prev;
        resolve();
      }
    };
  });
}

/** Minimal RSP client: enough framing to send one command. */
class RspProbe {
  private sock!: Socket;
  private buf = "";

  connect(port: number): Promise<string> {
    this.sock = tcpConnect({ host: "127.0.0.1", port });
    return this.readPacket();   // the stub reports its stop state on attach
  }

  private readPacket(): Promise<string> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("rsp timeout")), 15000);
      const tryParse = () => {
        const start = this.buf.indexOf("$");
        if (start < 0) return false;
        const hash = this.buf.indexOf("#", start);
        if (hash < 0 || this.buf.length < hash + 3) return false;
        const payload = this.buf.slice(start + 1, hash);
        this.buf = this.buf.slice(hash + 3);
        clearTimeout(timer);
        resolve(payload);
        return true;
      };
      const onData = (d: Buffer) => {
        this.buf += d.toString("latin1");
        if (tryParse()) this.sock.off("data", onData);
      };
      this.sock.on("data", onData);
      if (tryParse()) this.sock.off("data", onData);
    });
  }

  cmd(payload: string): Promise<string> {
    let sum = 0;
    for (const ch of payload) sum = (sum + ch.charCodeAt(0)) & 0xff;
    this.sock.write(`$${payload}#${sum.toString(16).padStart(2, "0")}`);
    return this.readPacket();
  }

  close() { this.sock.destroy(); }
}

describe("console against a live monitor", () => {
  it("runs the breakpoint/step/memory-edit acceptance flow", async () => {
    const session = await makeLiveSession();

    // the guest may be running or paused at attach; pause it to start clean
    if (session.running) {
      session.pause();
      await waitFor(session, () => !session.running, "pause stop");
    }

    // set a breakpoint on the checksum loop and continue into it
    session.setBreakpoint(ports.bp_addr);
    await waitFor(session, () => session.breakpoints.has(ports.bp_addr), "bp ack");
    session.continue_();
    await waitFor(session,
        () => !session.running && session.stopReason === "breakpoint",
        "breakpoint hit", 30000);
    expect(session.stopPc).toBe(ports.bp_addr);

    // registers panel reflects the stop verbatim
    await waitFor(session, () => session.regs?.pc === ports.bp_addr, "state event");

    // step once: the loop body instruction is a non-branch, so pc + 4
    session.step();
    await waitFor(session,
        () => session.stopReason === "step" && session.pending === null,
        "step stop");
    await waitFor(session, () => session.regs?.pc === ports.bp_addr + 4,
                  "stepped state");
    expect(session.regs!.pc).toBe(ports.bp_addr + 4);

    // clear the breakpoint so the RSP probe sees original memory
    session.clearBreakpoint(ports.bp_addr);
    await waitFor(session, () => !session.breakpoints.has(ports.bp_addr), "bp clear");

    // edit one byte through the bridge...
    const scratch = 0x3000;
    session.readMem(scratch, 16);
    await waitFor(session, () => session.memAddr === scratch, "mem view");
    session.writeMemByte(scratch, 0xa7);
    await waitFor(session,
        () => session.memAddr === scratch && session.memBytes?.[0] === 0xa7,
        "mem readback");

    // ...and confirm it through the other protocol entirely
    const probe = new RspProbe();
    await probe.connect(ports.gdb);
    const viaRsp = await probe.cmd("m3000,1");
    expect(viaRsp).toBe("a7");
    probe.close();
    session.close();
  }, 60000);
});
