/** Latest-wins HTTP client for the transfer endpoint. */

import { TransferPayload } from "./state.js";

export interface TransferResponse {
  result_png_b64: string;
  warped_png_b64?: string;
}

export interface ApiErrorBody {
  error: string;
  message?: string;
}

export type TransferOutcome =
  | { kind: "result"; response: TransferResponse }
  | { kind: "api_error"; body: ApiErrorBody }
  | { kind: "network_error"; message: string }
  | { kind: "stale" };

/** Minimal fetch surface so tests can inject a simulated network. */
export type PostJson = (
  url: string,
  body: unknown
) => Promise<{ status: number; json: () => Promise<unknown> }>;

/**
 * Serializes intent, not requests: every call gets a fresh id and only the
 * response matching the newest id is applied; earlier in-flight responses
 * resolve as stale and must be ignored by the caller.
 */
export class TransferClient {
  private latestId = 0;

  constructor(
    private readonly post: PostJson,
    private readonly baseUrl: string = ""
  ) {}

  get inFlightId(): number {
    return this.latestId;
  }

  async requestTransfer(payload: TransferPayload): Promise<TransferOutcome> {
    const id = ++this.latestId;
    let status: number;
    let body: unknown;
    try {
      const response = await this.post(this.baseUrl + "/api/transfer", payload);
      status = response.status;
      body = await response.json();
    } catch (err) {
      if (id !== this.latestId) return { kind: "stale" };
      return { kind: "network_error", message: String(err) };
    }
    if (id !== this.latestId) return { kind: "stale" };
    if (status === 200) {
      return { kind: "result", response: body as TransferResponse };
    }
    return { kind: "api_error", body: body as ApiErrorBody };
  }
}
