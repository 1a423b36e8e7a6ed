import { AnnotationDraft, validateDraft } from './trapezoid.js';

function clampCorner(p: { x: number; y: number }, width: number, height: number): number[] {
    const cx = Math.max(0, Math.min(width, Math.round(p.x)));
    const cy = Math.max(0, Math.min(height, Math.round(p.y)));
    return [cx, cy];
}

/**
 * Serialize a draft to the exact sidecar bytes the generator loads:
 * alphabetically ordered keys, two-space indent, integer corners clamped to
 * the image bounds, trailing newline. Refuses invalid drafts.
 */
export function exportSidecar(draft: AnnotationDraft): string {
    const violations = validateDraft(draft);
    if (violations.length > 0) {
        throw new Error(`draft is invalid: ${violations.join('; ')}`);
    }
    const w = draft.imageWidth;
    const h = draft.imageHeight;
    // Key insertion order below matches sorted-key JSON on the loader side.
    const sidecar = {
        dominant_color: draft.dominantColor,
        environment: draft.environment,
        scale_far: draft.scaleFar,
        scale_near: draft.scaleNear,
        trapezoid: {
            far_left: clampCorner(draft.farLeft, w, h),
            far_right: clampCorner(draft.farRight, w, h),
            near_left: clampCorner(draft.nearLeft, w, h),
            near_right: clampCorner(draft.nearRight, w, h),
        },
    };
    return JSON.stringify(sidecar, null, 2) + '\n';
}

export function suggestedFileName(imageName: string): string {
    return imageName.replace(/\.[a-zA-Z0-9]+$/, '') + '.json';
}
