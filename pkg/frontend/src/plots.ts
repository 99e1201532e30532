/**
 * SVG plot builders for the solver ledgers.
 *
 * Everything is rendered to plain SVG strings (no DOM): log-log
 * convergence plots with slope markers, and time histories of the
 * energy/mass ledgers.
 *
 * The slope annotations on convergence plots are NOT fitted here: they
 * are the `order` values exported by the solver in eoc.csv, passed in by
 * the caller and printed verbatim through `formatOrder`.  The test suite
 * enforces this by feeding doctored orders and checking they appear
 * unchanged.
 */

import { format } from "d3-format";
import { scaleLinear, scaleLog } from "d3-scale";
import { line } from "d3-shape";

import type { ConsistencyRow, EnergyRow, ErrorsRow, MassRow } from "./csv.js";

export const formatOrder = format(".3~g");
const fmtTick = format(".2~g");
const fmtSci = format(".1~e");

const W = 640;
const H = 420;
const M = { top: 24, right: 160, bottom: 46, left: 64 };
const COLORS = ["#1b6ca8", "#c23b22", "#2e7d32", "#7b1fa2", "#ef6c00"];

interface Series {
  label: string;
  points: Array<[number, number]>;
  /** annotation exactly as exported by the solver; omitted -> none */
  order?: number;
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function svgOpen(title: string): string {
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}" font-family="sans-serif" font-size="12">
<title>${esc(title)}</title>
<rect width="${W}" height="${H}" fill="white"/>`;
}

function axisBox(): string {
  return `<rect x="${M.left}" y="${M.top}" width="${W - M.left - M.right}" height="${H - M.top - M.bottom}" fill="none" stroke="#444"/>`;
}

/** Log-log convergence plot; one slope label per series, taken verbatim. */
export function convergencePlot(
  title: string,
  xLabel: string,
  series: Series[],
): string {
  const xs = series.flatMap((s) => s.points.map((p) => p[0]));
  const ys = series.flatMap((s) => s.points.map((p) => p[1]));
  if (xs.some((v) => v <= 0) || ys.some((v) => v <= 0)) {
    throw new Error("log-log plot needs positive data");
  }
  const x = scaleLog()
    .domain([Math.min(...xs) / 1.15, Math.max(...xs) * 1.15])
    .range([M.left, W - M.right]);
  const y = scaleLog()
    .domain([Math.min(...ys) / 1.5, Math.max(...ys) * 1.5])
    .range([H - M.bottom, M.top]);

  const parts = [svgOpen(title), axisBox()];
  for (const t of x.ticks(4)) {
    parts.push(
      `<line x1="${x(t)}" y1="${M.top}" x2="${x(t)}" y2="${H - M.bottom}" stroke="#ddd"/>`,
      `<text x="${x(t)}" y="${H - M.bottom + 16}" text-anchor="middle">${fmtTick(t)}</text>`,
    );
  }
  for (const t of y.ticks(4)) {
    parts.push(
      `<line x1="${M.left}" y1="${y(t)}" x2="${W - M.right}" y2="${y(t)}" stroke="#ddd"/>`,
      `<text x="${M.left - 6}" y="${y(t) + 4}" text-anchor="end">${fmtSci(t)}</text>`,
    );
  }

  const path = line<[number, number]>()
    .x((p) => x(p[0]))
    .y((p) => y(p[1]));
  series.forEach((s, i) => {
    const color = COLORS[i % COLORS.length];
    const sorted = [...s.points].sort((a, b) => a[0] - b[0]);
    parts.push(`<path d="${path(sorted)}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
    for (const p of sorted) {
      parts.push(`<circle cx="${x(p[0])}" cy="${y(p[1])}" r="3.5" fill="${color}"/>`);
    }
    const legendY = M.top + 16 + 34 * i;
    const label = s.order === undefined
      ? s.label
      : `${s.label}: O(h^${formatOrder(s.order)})`;
    parts.push(
      `<line x1="${W - M.right + 8}" y1="${legendY}" x2="${W - M.right + 28}" y2="${legendY}" stroke="${color}" stroke-width="2"/>`,
      `<text class="slope-label" x="${W - M.right + 34}" y="${legendY + 4}">${esc(label)}</text>`,
    );
  });

  parts.push(
    `<text x="${(M.left + W - M.right) / 2}" y="${H - 10}" text-anchor="middle">${esc(xLabel)}</text>`,
    `<text x="16" y="${(M.top + H - M.bottom) / 2}" transform="rotate(-90 16 ${(M.top + H - M.bottom) / 2})" text-anchor="middle">error</text>`,
    `</svg>`,
  );
  return parts.join("\n");
}

/** Linear-scale time history with one line per named column. */
export function historyPlot(
  title: string,
  rows: Array<Record<string, number | string>>,
  columns: Array<{ key: string; label: string }>,
  xKey = "time",
): string {
  const ts = rows.map((r) => Number(r[xKey]));
  const vals = columns.flatMap((c) => rows.map((r) => Number(r[c.key])));
  const pad = (Math.max(...vals) - Math.min(...vals)) * 0.08 || 1e-12;
  const x = scaleLinear()
    .domain([Math.min(...ts), Math.max(...ts)])
    .range([M.left, W - M.right]);
  const y = scaleLinear()
    .domain([Math.min(...vals) - pad, Math.max(...vals) + pad])
    .range([H - M.bottom, M.top]);

  const parts = [svgOpen(title), axisBox()];
  for (const t of x.ticks(5)) {
    parts.push(
      `<text x="${x(t)}" y="${H - M.bottom + 16}" text-anchor="middle">${fmtTick(t)}</text>`,
    );
  }
  for (const t of y.ticks(5)) {
    parts.push(
      `<line x1="${M.left}" y1="${y(t)}" x2="${W - M.right}" y2="${y(t)}" stroke="#eee"/>`,
      `<text x="${M.left - 6}" y="${y(t) + 4}" text-anchor="end">${fmtSci(t)}</text>`,
    );
  }
  const path = line<number>()
    .x((_, i) => x(ts[i]))
    .y((v) => y(v));
  columns.forEach((c, i) => {
    const color = COLORS[i % COLORS.length];
    const data = rows.map((r) => Number(r[c.key]));
    parts.push(`<path d="${path(data)}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
    const legendY = M.top + 16 + 18 * i;
    parts.push(
      `<line x1="${W - M.right + 8}" y1="${legendY}" x2="${W - M.right + 28}" y2="${legendY}" stroke="${color}" stroke-width="2"/>`,
      `<text x="${W - M.right + 34}" y="${legendY + 4}">${esc(c.label)}</text>`,
    );
  });
  parts.push(
    `<text x="${(M.left + W - M.right) / 2}" y="${H - 10}" text-anchor="middle">${esc(xKey)}</text>`,
    `</svg>`,
  );
  return parts.join("\n");
}

/** errors.csv + the matching eoc.csv orders -> convergence plot. */
export function errorConvergencePlot(
  rows: ErrorsRow[],
  orders: Map<string, number>,
): string {
  const mk = (key: keyof ErrorsRow, label: string): Series => ({
    label,
    points: rows.map((r) => [r.h, Number(r[key])] as [number, number]),
    order: orders.get(`errors/${key}`),
  });
  return convergencePlot(
    `errors vs h (${rows[0]?.case ?? ""})`,
    "h",
    [
      mk("rel_energy", "rel. energy"),
      mk("vel_l2", "velocity L2"),
      mk("vel_h1", "velocity H1"),
    ],
  );
}

/** consistency.csv + eoc.csv orders -> residual-decay plot. */
export function consistencyPlot(
  rows: ConsistencyRow[],
  orders: Map<string, number>,
): string {
  const mk = (key: keyof ConsistencyRow, label: string): Series => ({
    label,
    points: rows.map((r) => [r.h, Number(r[key])] as [number, number]),
    order: orders.get(`consistency/${key}`),
  });
  return convergencePlot(
    `consistency residuals vs h (${rows[0]?.case ?? ""})`,
    "h",
    [mk("res_mass", "mass residual"), mk("res_momentum", "momentum residual")],
  );
}

export function energyHistoryPlot(rows: EnergyRow[]): string {
  return historyPlot("energy ledger", rows as unknown as Array<Record<string, number>>, [
    { key: "energy", label: "total" },
    { key: "kinetic", label: "kinetic" },
    { key: "internal", label: "internal" },
    { key: "dissipation", label: "viscous dissipation (dt-scaled)" },
  ]);
}

export function massHistoryPlot(rows: MassRow[]): string {
  return historyPlot("mass ledger", rows as unknown as Array<Record<string, number>>, [
    { key: "mass", label: "total mass" },
    { key: "residual", label: "balance residual" },
  ]);
}
