/**
 * Typed readers for the solver's CSV ledgers.
 *
 * The ledgers are the only interface to the solver: plain CSV with a
 * header row and numeric columns (see the solver README for who writes
 * what).  Column sets are pinned here so a contract drift fails loudly
 * instead of producing empty plots.
 */

import fs from "node:fs";
import Papa from "papaparse";

export interface EnergyRow {
  step: number;
  time: number;
  kinetic: number;
  internal: number;
  energy: number;
  dissipation: number;
  identity_residual: number;
  slack: number;
}

export interface MassRow {
  step: number;
  time: number;
  mass: number;
  outflux: number;
  influx: number;
  residual: number;
}

export interface ErrorsRow {
  case: string;
  level: number;
  h: number;
  dt: number;
  n_steps: number;
  t_final: number;
  rel_energy: number;
  vel_l2: number;
  vel_h1: number;
}

export interface ConsistencyRow {
  case: string;
  level: number;
  h: number;
  dt: number;
  n_steps: number;
  res_mass: number;
  res_momentum: number;
}

export interface EocRow {
  study: "errors" | "consistency";
  quantity: string;
  order: number;
}

const REQUIRED: Record<string, string[]> = {
  energy: [
    "step", "time", "kinetic", "internal", "energy", "dissipation",
    "identity_residual", "slack",
  ],
  mass: ["step", "time", "mass", "outflux", "influx", "residual"],
  errors: [
    "case", "level", "h", "dt", "n_steps", "t_final", "rel_energy",
    "vel_l2", "vel_h1",
  ],
  consistency: [
    "case", "level", "h", "dt", "n_steps", "res_mass", "res_momentum",
  ],
  eoc: ["study", "quantity", "order"],
};

export function parseLedger<T>(text: string, kind: keyof typeof REQUIRED): T[] {
  const parsed = Papa.parse<Record<string, unknown>>(text.trim(), {
    header: true,
    dynamicTyping: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`bad ${kind} ledger: ${e.message} (row ${e.row})`);
  }
  const cols = parsed.meta.fields ?? [];
  for (const c of REQUIRED[kind]) {
    if (!cols.includes(c)) {
      throw new Error(`${kind} ledger is missing column '${c}' (got: ${cols.join(",")})`);
    }
  }
  return parsed.data as T[];
}

export function readLedger<T>(path: string, kind: keyof typeof REQUIRED): T[] {
  return parseLedger<T>(fs.readFileSync(path, "utf8"), kind);
}

/** Orders keyed by `study/quantity`, taken verbatim from eoc.csv. */
export function orderMap(rows: EocRow[]): Map<string, number> {
  const m = new Map<string, number>();
  for (const r of rows) m.set(`${r.study}/${r.quantity}`, r.order);
  return m;
}
