#!/usr/bin/env node
/**
 * Minimal external simulator speaking the falsify engine's wire protocol.
 *
 * Connects to a listening campaign (`falsify run --sim tcp:HOST:PORT`),
 * receives one init frame, integrates a toy centerline-tracking plant at the
 * requested sample period, streams the trajectory back as step frames and
 * finishes with done. One episode per invocation. The controller reads the
 * true plant state, so there is no perception model to get wrong; the point
 * of this program is to document the protocol from the simulator's side, not
 * to be a faithful vehicle. See PROTOCOL.md at the repository root for the
 * frame reference.
 */

import net from "node:net";

// Plant constants: nose-wheel turn rate limit (deg/s), heading clamp (deg),
// ground speed (m/s), proportional gains on cross-track and heading error.
const TURN_LIMIT = 25.0;
const HEADING_LIMIT = 90.0;
const SPEED = 5.0;
const GAIN_CTE = 1.4;
const GAIN_HE = 0.45;

// Give up if the engine goes quiet for this long.
const IDLE_TIMEOUT_MS = 30_000;

// Refuse configs that would ask for an absurd number of samples.
const MAX_STEPS = 1_000_000;

export interface TestConfig {
  episodeId: number;
  features: Record<string, number | string>;
  duration: number;
  period: number;
  modes: Record<string, unknown>;
}

export interface Step {
  t: number;
  signals: { cte: number; he: number };
}

/** The engine sent something that is not a well-formed frame for this point
 * in the session; the client answers with an error frame and gives up. */
export class ProtocolViolation extends Error {}

export type FirstFrame =
  | { kind: "init"; config: TestConfig }
  | { kind: "engine-error"; message: string };

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function plainObject(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

/** Parse and validate the first line of a session. Returns the decoded init
 * or a reported engine-side error; anything else throws ProtocolViolation.
 * JSON.parse accepts numbers like 1e999 as Infinity, hence the finiteness
 * checks on everything numeric. */
export function readFirstFrame(line: string): FirstFrame {
  let frame: unknown;
  try {
    frame = JSON.parse(line);
  } catch {
    throw new ProtocolViolation("frame is not valid JSON");
  }
  if (!plainObject(frame)) {
    throw new ProtocolViolation("frame is not an object");
  }
  if (frame.type === "error") {
    const message = typeof frame.message === "string" ? frame.message : "";
    return { kind: "engine-error", message };
  }
  if (frame.type !== "init") {
    throw new ProtocolViolation(`expected an init frame, got type ${JSON.stringify(frame.type)}`);
  }
  const config = frame.config;
  if (!plainObject(config)) {
    throw new ProtocolViolation("init carries no config object");
  }
  const episodeId = config.episode_id;
  if (!isFiniteNumber(episodeId) || !Number.isInteger(episodeId) || episodeId < 0) {
    throw new ProtocolViolation("episode_id must be a non-negative integer");
  }
  const duration = config.duration;
  if (!isFiniteNumber(duration) || duration <= 0) {
    throw new ProtocolViolation("duration must be a positive finite number");
  }
  const period = config.period;
  if (!isFiniteNumber(period) || period <= 0) {
    throw new ProtocolViolation("period must be a positive finite number");
  }
  const features = config.features;
  if (!plainObject(features)) {
    throw new ProtocolViolation("features must be an object");
  }
  for (const [name, value] of Object.entries(features)) {
    if (typeof value !== "string" && !isFiniteNumber(value)) {
      throw new ProtocolViolation(`feature ${name} is neither a finite number nor a tag`);
    }
  }
  const modes = config.modes ?? {};
  if (!plainObject(modes)) {
    throw new ProtocolViolation("modes must be an object");
  }
  if (Math.round(duration / period) > MAX_STEPS) {
    throw new ProtocolViolation("duration/period asks for too many samples");
  }
  return {
    kind: "init",
    config: {
      episodeId,
      features: features as Record<string, number | string>,
      duration,
      period,
      modes,
    },
  };
}

function clamp(x: number, limit: number): number {
  return Math.max(-limit, Math.min(limit, x));
}

/** Integrate the toy plant: record the starting state at t = 0, then one
 * controller-plus-kinematics update per period until duration is covered,
 * round(duration/period) + 1 samples in all. Unknown features and every
 * mode are ignored; start_cte and start_he default to the centerline. */
export function simulate(config: TestConfig): Step[] {
  const feature = (name: string): number => {
    const value = config.features[name];
    return typeof value === "number" ? value : 0.0;
  };
  let cte = feature("start_cte");
  let he = feature("start_he");
  const dt = config.period;
  const count = Math.round(config.duration / dt);
  const steps: Step[] = [{ t: 0.0, signals: { cte, he } }];
  for (let i = 1; i <= count; i++) {
    const turn = clamp(-GAIN_CTE * cte - GAIN_HE * he, TURN_LIMIT);
    he = clamp(he + turn * dt, HEADING_LIMIT);
    cte += SPEED * Math.sin((he * Math.PI) / 180.0) * dt;
    steps.push({ t: i * dt, signals: { cte, he } });
  }
  return steps;
}

// Frames go out in the canonical shape: type key first, no spaces, newline
// terminated. JSON.stringify preserves insertion order for string keys.

export function encodeStep(step: Step): string {
  return JSON.stringify({ type: "step", t: step.t, signals: step.signals }) + "\n";
}

export function encodeDone(): string {
  return JSON.stringify({ type: "done", status: "ok" }) + "\n";
}

export function encodeError(message: string): string {
  return JSON.stringify({ type: "error", message }) + "\n";
}

/** Run one episode against the engine at host:port. Resolves to the process
 * exit status: 0 after a clean init/steps/done exchange, 1 for everything
 * else (unreachable engine, malformed init, engine-side error). Never
 * rejects. */
export function runClient(host: string, port: number): Promise<number> {
  return new Promise((resolve) => {
    const socket = net.createConnection({ host, port });
    let buffer = "";
    let sentDone = false;
    let settled = false;

    const settle = (code: number) => {
      if (!settled) {
        settled = true;
        socket.setTimeout(0);
        resolve(code);
      }
    };
    const fail = (message: string) => {
      process.stderr.write(message + "\n");
      settle(1);
      socket.destroy();
    };

    socket.setTimeout(IDLE_TIMEOUT_MS);
    socket.on("timeout", () => fail("timed out waiting for the engine"));
    socket.on("error", (err: Error) => fail(`connection failed: ${err.message}`));
    socket.on("close", () => settle(sentDone ? 0 : 1));
    socket.on("data", (chunk: Buffer) => {
      buffer += chunk.toString("utf8");
      for (let nl = buffer.indexOf("\n"); nl >= 0; nl = buffer.indexOf("\n")) {
        const line = buffer.slice(0, nl);
        buffer = buffer.slice(nl + 1);
        if (!settled) {
          handleLine(line);
        }
      }
    });

    function handleLine(line: string): void {
      if (sentDone) {
        // Nothing legitimate arrives after done; whatever this was, the
        // episode can no longer be considered clean.
        fail(`engine sent a frame after done: ${line}`);
        return;
      }
      let first: FirstFrame;
      try {
        first = readFirstFrame(line);
      } catch (err) {
        if (err instanceof ProtocolViolation) {
          // Tell the engine why before hanging up; end() flushes the frame
          // and its callback fires once the write side is finished.
          socket.write(encodeError(err.message));
          process.stderr.write(`bad init: ${err.message}\n`);
          socket.end(() => settle(1));
          return;
        }
        throw err;
      }
      if (first.kind === "engine-error") {
        fail(`engine reported: ${first.message}`);
        return;
      }
      const config = first.config;
      const steps = simulate(config);
      sentDone = true;
      socket.write(steps.map(encodeStep).join("") + encodeDone());
      socket.end(() => settle(0));
      process.stdout.write(`episode ${config.episodeId}: ${steps.length} steps over ${config.duration}s\n`);
    }
  });
}

/** `--connect HOST:PORT` and nothing else. */
export function parseArgs(argv: string[]): { host: string; port: number } | null {
  if (argv.length !== 2 || argv[0] !== "--connect") {
    return null;
  }
  const target = argv[1];
  const colon = target.lastIndexOf(":");
  if (colon <= 0 || colon === target.length - 1) {
    return null;
  }
  const port = Number(target.slice(colon + 1));
  if (!Number.isInteger(port) || port < 1 || port > 65535) {
    return null;
  }
  return { host: target.slice(0, colon), port };
}

// typeof guards keep this inert when the file is imported by the test
// runner, whichever module system it evaluates under.
if (typeof require !== "undefined" && typeof module !== "undefined" && require.main === module) {
  const parsed = parseArgs(process.argv.slice(2));
  if (parsed === null) {
    process.stderr.write("usage: example_client --connect HOST:PORT\n");
    process.exit(1);
  } else {
    runClient(parsed.host, parsed.port).then((code) => process.exit(code));
  }
}
