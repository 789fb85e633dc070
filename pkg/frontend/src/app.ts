/** Studio controller: owns the session state, issues transfers, applies results. */

import {
  ImageSelection,
  Mode,
  Part,
  Second,
  SessionState,
  buildTransferPayload,
  canSubmit,
  clampShade,
  initialState,
  validateState,
} from "./state.js";
import { TransferClient, TransferOutcome } from "./transport.js";

export interface ResultPanel {
  resultPngB64: string | null;
  warpedPngB64: string | null;
  message: string | null;
  canRetry: boolean;
}

export interface StudioView {
  render(state: SessionState, panel: ResultPanel): void;
}

export class StudioController {
  readonly state: SessionState = initialState();
  private panel: ResultPanel = {
    resultPngB64: null,
    warpedPngB64: null,
    message: null,
    canRetry: false,
  };

  constructor(
    private readonly client: TransferClient,
    private readonly view: StudioView
  ) {}

  get resultPanel(): ResultPanel {
    return this.panel;
  }

  setSource(selection: ImageSelection | null): Promise<void> {
    this.state.source = selection;
    return this.refresh();
  }

  setReference(slot: number, selection: ImageSelection | null): Promise<void> {
    this.state.references[slot] = selection;
    return this.refresh();
  }

  assignPart(part: Part, slot: number | null): Promise<void> {
    if (slot === null) {
      delete this.state.parts[part];
    } else {
      this.state.parts[part] = slot;
    }
    return this.refresh();
  }

  setShade(raw: number): Promise<void> {
    this.state.shade = clampShade(raw);
    return this.refresh();
  }

  setMode(mode: Mode): Promise<void> {
    this.state.mode = mode;
    return this.refresh();
  }

  setSecond(second: Second): Promise<void> {
    this.state.second = second;
    return this.refresh();
  }

  /** No request: the warped intermediate rides along with every response. */
  toggleAlignment(): void {
    this.state.showAlignment = !this.state.showAlignment;
    this.view.render(this.state, this.panel);
  }

  /** Re-validate and, when submittable, issue a latest-wins transfer. */
  async refresh(): Promise<void> {
    const errors = validateState(this.state).filter((i) => i.severity === "error");
    if (!canSubmit(this.state)) {
      this.panel = {
        ...this.panel,
        message: errors[0]?.message ?? "Incomplete selection.",
        canRetry: false,
      };
      this.view.render(this.state, this.panel);
      return;
    }
    const outcome = await this.client.requestTransfer(buildTransferPayload(this.state));
    this.applyOutcome(outcome);
  }

  private applyOutcome(outcome: TransferOutcome): void {
    switch (outcome.kind) {
      case "stale":
        return; // a newer request owns the panel
      case "result":
        this.panel = {
          resultPngB64: outcome.response.result_png_b64,
          warpedPngB64: outcome.response.warped_png_b64 ?? null,
          message: null,
          canRetry: false,
        };
        break;
      case "api_error":
        this.panel = {
          ...this.panel,
          message: outcome.body.message ?? outcome.body.error,
          canRetry: false,
        };
        break;
      case "network_error":
        this.panel = {
          ...this.panel,
          message: "Network error — check the service and retry.",
          canRetry: true,
        };
        break;
    }
    this.view.render(this.state, this.panel);
  }
}
