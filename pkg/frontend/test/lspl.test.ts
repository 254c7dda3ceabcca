import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { LsplError, parseLspl } from "../src/lspl.js";

const FIXTURES = join(__dirname, "fixtures");

function loadFixture(name: string): ArrayBuffer {
  const buf = readFileSync(join(FIXTURES, name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

const meta = JSON.parse(readFileSync(join(FIXTURES, "meta.json"), "utf-8"));

describe("parseLspl", () => {
  it("loads the exported two-layer asset", () => {
    const asset = parseLspl(loadFixture("two_layer.lspl"));
    expect(asset.count).toBe(meta.splatCount);
    expect(asset.layerCount).toBe(meta.layerCount);
    expect(asset.layers.map((l) => l.count)).toEqual(meta.layerCounts);
    expect(asset.profile).toBe("clustered");
    // codebook expanded: every splat has a full rest vector
    for (const layer of asset.layers) {
      expect(layer.shRest.length).toBe(layer.count * asset.restCoeffs);
      expect(layer.positions.length).toBe(layer.count * 3);
    }
  });

  it("rejects bad magic with a distinct message", () => {
    const data = new Uint8Array(64);
    data.set([0x4e, 0x4f, 0x50, 0x45]); // "NOPE"
    expect(() => parseLspl(data.buffer)).toThrow(/not an LSPL file/);
  });

  it("rejects version mismatches with a distinct message", () => {
    const good = new Uint8Array(loadFixture("two_layer.lspl"));
    good[4] = 9;
    expect(() => parseLspl(good.buffer.slice(0))).toThrow(
      /unsupported LSPL version 9/);
  });

  it("rejects truncated payloads with a distinct message", () => {
    const good = loadFixture("two_layer.lspl");
    expect(() => parseLspl(good.slice(0, good.byteLength - 16)))
      .toThrow(/truncated/);
    expect(() => parseLspl(good.slice(0, 10))).toThrow(/truncated/);
  });

  it("loads a header-only empty file without crashing", () => {
    // header for 0 splats, 2 layers, degree 3, low profile
    const buf = new ArrayBuffer(32 + 2 * 4 + 24 + 2 * 45 * 4);
    const view = new DataView(buf);
    new Uint8Array(buf).set([0x4c, 0x53, 0x50, 0x4c]); // LSPL
    view.setUint32(4, 1, true);
    view.setUint32(8, 0, true);
    view.setBigUint64(12, 0n, true);
    view.setUint32(20, 2, true);
    view.setUint32(24, 3, true);
    view.setUint32(28, 0, true);
    const asset = parseLspl(buf);
    expect(asset.count).toBe(0);
    expect(asset.layerCount).toBe(2);
    expect(asset.layers.length).toBe(2);
    expect(asset.layers[0].count).toBe(0);
  });
});
