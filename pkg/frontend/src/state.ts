/** Session state and payload construction for the studio UI. */

export const PARTS = ["lip", "skin", "eyes"] as const;
export type Part = (typeof PARTS)[number];

export type Mode = "transfer" | "removal";
export type Second = "source" | "ref2";

/** One selected image: either a gallery pick or an upload. */
export interface ImageSelection {
  /** Gallery sample id, or null for uploads. */
  galleryId: string | null;
  /** Base64 PNG of the image; always present once the slot is filled. */
  imagePngB64: string;
  /** Base64 PNG of the label map; uploads may lack one until provided. */
  maskPngB64: string | null;
  /** Domain tag from the gallery ("X" bare / "Y" makeup); null for uploads. */
  domain: string | null;
}

export interface SessionState {
  source: ImageSelection | null;
  /** Up to 3 reference slots; holes are null. */
  references: (ImageSelection | null)[];
  /** Part -> reference slot index. Unassigned parts are omitted. */
  parts: Partial<Record<Part, number>>;
  shade: number;
  second: Second;
  mode: Mode;
  showAlignment: boolean;
}

export function initialState(): SessionState {
  return {
    source: null,
    references: [null, null, null],
    parts: { lip: 0, skin: 0, eyes: 0 },
    shade: 1.0,
    second: "source",
    mode: "transfer",
    showAlignment: false,
  };
}

export const SHADE_STEP = 0.01;

/** Clamp to [0,1] and quantize to the slider's 0.01 steps. */
export function clampShade(raw: number): number {
  if (!Number.isFinite(raw)) return 1.0;
  const clamped = Math.min(1, Math.max(0, raw));
  return Math.round(clamped / SHADE_STEP) * SHADE_STEP;
}

export interface ValidationIssue {
  severity: "error" | "warning";
  message: string;
}

/** Client-side validation mirroring the server's 400 responses. */
export function validateState(state: SessionState): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  if (!state.source) {
    issues.push({ severity: "error", message: "Select a source image first." });
  } else if (!state.source.maskPngB64) {
    issues.push({ severity: "error", message: "The source needs a mask before transfer." });
  }
  const filled = state.references
    .map((ref, i) => ({ ref, i }))
    .filter((s): s is { ref: ImageSelection; i: number } => s.ref !== null);
  if (filled.length === 0) {
    issues.push({ severity: "error", message: "Select at least one reference." });
  }
  for (const { ref, i } of filled) {
    if (!ref.maskPngB64) {
      issues.push({ severity: "error", message: `Reference slot ${i + 1} is missing its mask.` });
    }
    if (state.mode === "transfer" && ref.domain === "X") {
      issues.push({
        severity: "warning",
        message: `Reference slot ${i + 1} is a bare-face sample; transfer expects a makeup reference.`,
      });
    }
  }
  const assigned = Object.entries(state.parts);
  if (assigned.length === 0) {
    issues.push({ severity: "error", message: "Select at least one part to transfer." });
  }
  for (const [part, slot] of assigned) {
    if (state.references[slot as number] === null) {
      issues.push({ severity: "error", message: `Part "${part}" points at an empty reference slot.` });
    }
  }
  if (state.second === "ref2" && filled.length < 2) {
    issues.push({ severity: "error", message: "Interpolating toward a second reference needs two references." });
  }
  if (state.shade < 0 || state.shade > 1) {
    issues.push({ severity: "error", message: "Shade must lie between 0 and 1." });
  }
  return issues;
}

export function canSubmit(state: SessionState): boolean {
  return validateState(state).every((issue) => issue.severity !== "error");
}

export interface TransferPayload {
  source_png_b64: string;
  source_mask_png_b64: string;
  references: { image_png_b64: string; mask_png_b64: string }[];
  parts: Record<string, number>;
  shade: number;
  second: Second;
  mode: Mode;
  return_warped: boolean;
}

/**
 * Build the POST /api/transfer body. Reference slots are compacted (holes
 * dropped) with part indices remapped, so the payload depends only on the
 * session state — serializing and replaying the state reproduces it exactly.
 */
export function buildTransferPayload(state: SessionState): TransferPayload {
  if (!canSubmit(state)) {
    throw new Error("state is not submittable: " + JSON.stringify(validateState(state)));
  }
  const slotMap = new Map<number, number>();
  const references: { image_png_b64: string; mask_png_b64: string }[] = [];
  state.references.forEach((ref, i) => {
    if (ref !== null) {
      slotMap.set(i, references.length);
      references.push({ image_png_b64: ref.imagePngB64, mask_png_b64: ref.maskPngB64! });
    }
  });
  const parts: Record<string, number> = {};
  for (const part of PARTS) {
    const slot = state.parts[part];
    if (slot !== undefined) parts[part] = slotMap.get(slot)!;
  }
  return {
    source_png_b64: state.source!.imagePngB64,
    source_mask_png_b64: state.source!.maskPngB64!,
    references,
    parts,
    shade: clampShade(state.shade),
    second: state.second,
    mode: state.mode,
    return_warped: true,
  };
}
