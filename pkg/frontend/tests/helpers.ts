import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { FetchLike } from "../src/api.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "..", "fixtures");

export function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURES, `${name}.json`), "utf-8")) as T;
}

export interface RecordedCall {
  url: string;
  init?: RequestInit;
}

type Responder = (call: RecordedCall) => { status: number; body: unknown } | undefined;

// fetch double that replays recorded fixtures and logs every call
export function fakeFetch(responder: Responder): FetchLike & { calls: RecordedCall[] } {
  const calls: RecordedCall[] = [];
  const fn = async (url: string, init?: RequestInit): Promise<Response> => {
    const call = { url, init };
    calls.push(call);
    const match = responder(call);
    if (!match) throw new Error(`no responder for ${url}`);
    return new Response(JSON.stringify(match.body), {
      status: match.status,
      headers: { "Content-Type": "application/json" },
    });
  };
  const wrapped = fn as FetchLike & { calls: RecordedCall[] };
  wrapped.calls = calls;
  return wrapped;
}

export function requestBody(call: RecordedCall): Record<string, unknown> {
  return JSON.parse((call.init?.body as string) ?? "{}");
}
