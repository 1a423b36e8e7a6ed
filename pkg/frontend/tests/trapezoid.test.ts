import { describe, expect, it } from 'vitest';

import { AnnotationDraft, validateDraft } from '../src/trapezoid.js';

export function makeDraft(overrides: Partial<AnnotationDraft> = {}): AnnotationDraft {
    return {
        nearLeft: { x: 6, y: 61 },
        nearRight: { x: 58, y: 61 },
        farLeft: { x: 19, y: 32 },
        farRight: { x: 45, y: 32 },
        scaleNear: 1.25,
        scaleFar: 0.45,
        environment: 'forest',
        dominantColor: 'green',
        imageWidth: 64,
        imageHeight: 64,
        ...overrides,
    };
}

describe('validateDraft', () => {
    it('accepts the default corners', () => {
        expect(validateDraft(makeDraft())).toEqual([]);
    });

    it('rejects a near corner dragged above the far edge', () => {
        const draft = makeDraft({ nearLeft: { x: 6, y: 20 } });
        expect(validateDraft(draft).join(' ')).toContain('far edge');
    });

    it('rejects scale_far >= scale_near', () => {
        const draft = makeDraft({ scaleFar: 1.25 });
        expect(validateDraft(draft).join(' ')).toContain('scale_far');
    });

    it('rejects non-positive scales', () => {
        expect(validateDraft(makeDraft({ scaleNear: 0 }))).not.toEqual([]);
    });

    it('rejects a self-intersecting quadrilateral', () => {
        const draft = makeDraft({
            farLeft: { x: 45, y: 32 },
            farRight: { x: 19, y: 32 },
        });
        expect(validateDraft(draft).join(' ')).toContain('self-intersecting');
    });
});
