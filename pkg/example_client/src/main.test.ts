import net from "node:net";
import { describe, expect, it } from "vitest";

import {
  FirstFrame,
  ProtocolViolation,
  TestConfig,
  encodeDone,
  encodeError,
  encodeStep,
  parseArgs,
  readFirstFrame,
  runClient,
  simulate,
} from "./main";

const INIT = JSON.stringify({
  type: "init",
  config: {
    episode_id: 17,
    features: { start_cte: 3.0, start_he: -10.0, start_s: 1430.0, time_of_day: 13.0, clouds: "clear", rain: 0.0 },
    duration: 30.0,
    period: 0.1,
    modes: { seed: 99 },
  },
});

function config(overrides: Partial<TestConfig> = {}): TestConfig {
  return {
    episodeId: 0,
    features: {},
    duration: 10.0,
    period: 0.1,
    modes: {},
    ...overrides,
  };
}

interface Exchange {
  lines: string[];
  raw: string;
}

/** One-shot engine stand-in: accepts a single connection, optionally sends
 * one line, records everything the client writes until the connection
 * closes. */
function fakeEngine(
  firstLine: string | null,
  closeOnConnect = false,
): Promise<{ port: number; result: Promise<Exchange> }> {
  return new Promise((ready) => {
    let raw = "";
    let finish: (ex: Exchange) => void;
    const result = new Promise<Exchange>((r) => {
      finish = r;
    });
    const server = net.createServer((conn) => {
      conn.on("error", () => {});
      if (closeOnConnect) {
        conn.destroy();
        server.close();
        finish({ lines: [], raw });
        return;
      }
      if (firstLine !== null) {
        conn.write(firstLine + "\n");
      }
      conn.on("data", (chunk) => {
        raw += chunk.toString("utf8");
      });
      conn.on("close", () => {
        server.close();
        finish({ lines: raw.split("\n").filter((l) => l.length > 0), raw });
      });
    });
    server.listen(0, "127.0.0.1", () => {
      ready({ port: (server.address() as net.AddressInfo).port, result });
    });
  });
}

describe("parseArgs", () => {
  it("accepts --connect HOST:PORT and nothing else", () => {
    expect(parseArgs(["--connect", "127.0.0.1:4000"])).toEqual({ host: "127.0.0.1", port: 4000 });
    expect(parseArgs(["--connect", "engine.local:65535"])).toEqual({ host: "engine.local", port: 65535 });
    expect(parseArgs([])).toBeNull();
    expect(parseArgs(["--connect"])).toBeNull();
    expect(parseArgs(["--listen", "127.0.0.1:4000"])).toBeNull();
    expect(parseArgs(["--connect", "127.0.0.1"])).toBeNull();
    expect(parseArgs(["--connect", ":4000"])).toBeNull();
    expect(parseArgs(["--connect", "host:"])).toBeNull();
    expect(parseArgs(["--connect", "host:notaport"])).toBeNull();
    expect(parseArgs(["--connect", "host:0"])).toBeNull();
    expect(parseArgs(["--connect", "host:80", "extra"])).toBeNull();
  });
});

describe("readFirstFrame", () => {
  it("decodes the documented init frame", () => {
    const frame = readFirstFrame(INIT) as Extract<FirstFrame, { kind: "init" }>;
    expect(frame.kind).toBe("init");
    expect(frame.config.episodeId).toBe(17);
    expect(frame.config.duration).toBe(30.0);
    expect(frame.config.period).toBe(0.1);
    expect(frame.config.features.clouds).toBe("clear");
    expect(frame.config.features.start_cte).toBe(3.0);
    expect(frame.config.modes).toEqual({ seed: 99 });
  });

  it("passes an engine error through instead of objecting to it", () => {
    const frame = readFirstFrame('{"type":"error","message":"camera offline"}');
    expect(frame).toEqual({ kind: "engine-error", message: "camera offline" });
  });

  it("tolerates a missing modes object", () => {
    const frame = readFirstFrame(
      '{"type":"init","config":{"episode_id":0,"features":{},"duration":1.0,"period":0.5}}',
    ) as Extract<FirstFrame, { kind: "init" }>;
    expect(frame.config.modes).toEqual({});
  });

  it("rejects everything that is not a well-formed init", () => {
    const bad = [
      "not json at all",
      "[1,2,3]",
      '"init"',
      '{"type":"step","t":0,"signals":{"cte":0}}',
      '{"type":"init"}',
      '{"type":"init","config":[]}',
      '{"type":"init","config":{"episode_id":-1,"features":{},"duration":1,"period":0.1}}',
      '{"type":"init","config":{"episode_id":1.5,"features":{},"duration":1,"period":0.1}}',
      '{"type":"init","config":{"episode_id":0,"features":{},"duration":0,"period":0.1}}',
      '{"type":"init","config":{"episode_id":0,"features":{},"duration":1e999,"period":0.1}}',
      '{"type":"init","config":{"episode_id":0,"features":{},"duration":1,"period":"fast"}}',
      '{"type":"init","config":{"episode_id":0,"features":{},"duration":1,"period":-0.1}}',
      '{"type":"init","config":{"episode_id":0,"features":7,"duration":1,"period":0.1}}',
      '{"type":"init","config":{"episode_id":0,"features":{"ok":true},"duration":1,"period":0.1}}',
      '{"type":"init","config":{"episode_id":0,"features":{"x":1e999},"duration":1,"period":0.1}}',
      '{"type":"init","config":{"episode_id":0,"features":{},"duration":1,"period":0.1,"modes":3}}',
      '{"type":"init","config":{"episode_id":0,"features":{},"duration":1e7,"period":0.001}}',
    ];
    for (const line of bad) {
      expect(() => readFirstFrame(line), line).toThrow(ProtocolViolation);
    }
  });
});

describe("simulate", () => {
  it("emits round(duration/period) + 1 strictly increasing samples", () => {
    const steps = simulate(config({ features: { start_cte: 2.0, start_he: 0.0 } }));
    expect(steps.length).toBe(101);
    expect(steps[0].t).toBe(0.0);
    for (let i = 1; i < steps.length; i++) {
      expect(steps[i].t).toBeGreaterThan(steps[i - 1].t);
    }
    expect(steps[steps.length - 1].t).toBeCloseTo(10.0, 9);
  });

  it("stays pinned to the centerline from the equilibrium start", () => {
    const steps = simulate(config());
    for (const step of steps) {
      expect(step.signals.cte).toBe(0.0);
      expect(step.signals.he).toBe(0.0);
    }
  });

  it("steers a 2 m offset back toward the centerline within the episode", () => {
    const steps = simulate(config({ features: { start_cte: 2.0 } }));
    const worst = Math.max(...steps.map((s) => Math.abs(s.signals.cte)));
    const final = Math.abs(steps[steps.length - 1].signals.cte);
    expect(worst).toBeLessThanOrEqual(2.0);
    expect(final).toBeLessThan(0.5);
    for (const step of steps) {
      expect(Number.isFinite(step.signals.cte)).toBe(true);
      expect(Number.isFinite(step.signals.he)).toBe(true);
    }
  });

  it("ignores tags and unknown features", () => {
    const steps = simulate(config({ features: { start_cte: "sideways", clouds: "clear", start_s: 990.0 } }));
    expect(steps[0].signals).toEqual({ cte: 0.0, he: 0.0 });
  });
});

describe("frame encoding", () => {
  it("writes canonical newline-terminated JSON with the type key first", () => {
    expect(encodeStep({ t: 0.1, signals: { cte: 0.2, he: 1.0 } })).toBe(
      '{"type":"step","t":0.1,"signals":{"cte":0.2,"he":1}}\n',
    );
    expect(encodeDone()).toBe('{"type":"done","status":"ok"}\n');
    expect(JSON.parse(encodeError('bad "init"'))).toEqual({ type: "error", message: 'bad "init"' });
  });
});

describe("runClient", () => {
  it("completes an episode: init in, steps and done out, exit 0", async () => {
    const engine = await fakeEngine(
      JSON.stringify({
        type: "init",
        config: { episode_id: 3, features: { start_cte: 2.0, start_he: 0.0 }, duration: 10.0, period: 0.1, modes: {} },
      }),
    );
    const code = await runClient("127.0.0.1", engine.port);
    const { lines, raw } = await engine.result;
    expect(code).toBe(0);
    expect(raw.endsWith("\n")).toBe(true);
    expect(lines.length).toBe(102);
    const frames = lines.map((l) => JSON.parse(l));
    expect(frames[frames.length - 1]).toEqual({ type: "done", status: "ok" });
    const steps = frames.slice(0, -1);
    expect(steps[0].t).toBe(0.0);
    for (let i = 0; i < steps.length; i++) {
      expect(steps[i].type).toBe("step");
      expect(Object.keys(steps[i].signals).sort()).toEqual(["cte", "he"]);
      if (i > 0) {
        expect(steps[i].t).toBeGreaterThan(steps[i - 1].t);
      }
    }
  });

  it("answers a malformed init with a single error frame and exit 1", async () => {
    const engine = await fakeEngine('{"type":"init"}');
    const code = await runClient("127.0.0.1", engine.port);
    const { lines } = await engine.result;
    expect(code).toBe(1);
    expect(lines.length).toBe(1);
    expect(JSON.parse(lines[0]).type).toBe("error");
  });

  it("exits 1 silently when the engine reports an error", async () => {
    const engine = await fakeEngine('{"type":"error","message":"engine on fire"}');
    const code = await runClient("127.0.0.1", engine.port);
    const { raw } = await engine.result;
    expect(code).toBe(1);
    expect(raw).toBe("");
  });

  it("exits 1 with no traffic when the connection is refused", async () => {
    const port = await new Promise<number>((resolve) => {
      const probe = net.createServer();
      probe.listen(0, "127.0.0.1", () => {
        const p = (probe.address() as net.AddressInfo).port;
        probe.close(() => resolve(p));
      });
    });
    const code = await runClient("127.0.0.1", port);
    expect(code).toBe(1);
  });

  it("exits 1 when the engine hangs up before sending init", async () => {
    const engine = await fakeEngine(null, true);
    const code = await runClient("127.0.0.1", engine.port);
    expect(code).toBe(1);
  });
});
