#!/usr/bin/env node
/**
 * Smoke-test CLI: score a rollout JSONL file against a running reward
 * service and write one score object per line.
 *
 *   score-file <in.jsonl> <out.jsonl> [--base-url URL] [--alpha A]
 *              [--max-batch N]
 */

import { readFileSync, writeFileSync } from "node:fs";
import { RewardClient, ScoreItem } from "./client.js";

function fail(message: string): never {
  console.error(message);
  process.exit(1);
}

interface Args {
  input: string;
  output: string;
  baseUrl: string;
  alpha?: number;
  maxBatch: number;
}

function parseArgs(argv: string[]): Args {
  const positional: string[] = [];
  let baseUrl = "http://127.0.0.1:8080";
  let alpha: number | undefined;
  let maxBatch = 128;
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--base-url") {
      baseUrl = argv[++i] ?? fail("--base-url needs a value");
    } else if (arg === "--alpha") {
      alpha = Number(argv[++i] ?? fail("--alpha needs a value"));
      if (Number.isNaN(alpha)) fail("--alpha must be a number");
    } else if (arg === "--max-batch") {
      maxBatch = Number(argv[++i] ?? fail("--max-batch needs a value"));
      if (!Number.isInteger(maxBatch) || maxBatch < 1) {
        fail("--max-batch must be a positive integer");
      }
    } else if (arg.startsWith("--")) {
      fail(`unknown flag ${arg}`);
    } else {
      positional.push(arg);
    }
  }
  if (positional.length !== 2) {
    fail("usage: score-file <in.jsonl> <out.jsonl> [--base-url URL] [--alpha A] [--max-batch N]");
  }
  return { input: positional[0], output: positional[1], baseUrl, alpha, maxBatch };
}

function readItems(path: string): ScoreItem[] {
  const items: ScoreItem[] = [];
  for (const line of readFileSync(path, "utf-8").split("\n")) {
    if (!line.trim()) continue;
    const record = JSON.parse(line) as Record<string, unknown>;
    if (typeof record.sample_id !== "string" || typeof record.completion !== "string") {
      fail(`bad rollout line: ${line.slice(0, 120)}`);
    }
    items.push({ sample_id: record.sample_id, completion: record.completion });
  }
  return items;
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  const client = new RewardClient({ baseUrl: args.baseUrl, maxBatch: args.maxBatch });
  const items = readItems(args.input);
  const scores = await client.score(items, args.alpha);
  const lines = scores.map((score, i) =>
    JSON.stringify({ sample_id: items[i].sample_id, ...score }),
  );
  writeFileSync(args.output, lines.join("\n") + "\n", "utf-8");
  console.log(`scored ${scores.length} rollouts -> ${args.output}`);
}

main().catch((err) => {
  console.error(String(err));
  process.exit(1);
});
