/**
 * cnsfv-plots LEDGER_DIR [OUT_DIR]
 *
 * Reads whichever solver ledgers exist in LEDGER_DIR (energy.csv,
 * mass.csv, errors.csv, consistency.csv, eoc.csv) and writes the
 * corresponding SVG plots to OUT_DIR (default: LEDGER_DIR).
 */

import fs from "node:fs";
import path from "node:path";

import {
  ConsistencyRow,
  EnergyRow,
  EocRow,
  ErrorsRow,
  MassRow,
  orderMap,
  readLedger,
} from "./csv.js";
import {
  consistencyPlot,
  energyHistoryPlot,
  errorConvergencePlot,
  massHistoryPlot,
} from "./plots.js";

export function makePlots(dir: string, outDir: string): string[] {
  const written: string[] = [];
  const put = (name: string, svg: string) => {
    const p = path.join(outDir, name);
    fs.writeFileSync(p, svg + "\n");
    written.push(p);
  };
  const has = (name: string) => fs.existsSync(path.join(dir, name));

  const orders = has("eoc.csv")
    ? orderMap(readLedger<EocRow>(path.join(dir, "eoc.csv"), "eoc"))
    : new Map<string, number>();

  if (has("energy.csv")) {
    put("energy.svg", energyHistoryPlot(
      readLedger<EnergyRow>(path.join(dir, "energy.csv"), "energy")));
  }
  if (has("mass.csv")) {
    put("mass.svg", massHistoryPlot(
      readLedger<MassRow>(path.join(dir, "mass.csv"), "mass")));
  }
  if (has("errors.csv")) {
    put("errors.svg", errorConvergencePlot(
      readLedger<ErrorsRow>(path.join(dir, "errors.csv"), "errors"), orders));
  }
  if (has("consistency.csv")) {
    put("consistency.svg", consistencyPlot(
      readLedger<ConsistencyRow>(path.join(dir, "consistency.csv"),
        "consistency"), orders));
  }
  return written;
}

const isMain = process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${path.resolve(process.argv[1])}`).href;

if (isMain) {
  const dir = process.argv[2];
  if (!dir) {
    console.error("usage: cnsfv-plots LEDGER_DIR [OUT_DIR]");
    process.exit(2);
  }
  const outDir = process.argv[3] ?? dir;
  fs.mkdirSync(outDir, { recursive: true });
  const written = makePlots(dir, outDir);
  if (written.length === 0) {
    console.error(`no ledgers found in ${dir}`);
    process.exit(1);
  }
  for (const p of written) console.log(p);
}
