export interface Point {
    x: number;
    y: number;
}

export interface AnnotationDraft {
    nearLeft: Point;
    nearRight: Point;
    farLeft: Point;
    farRight: Point;
    scaleNear: number;
    scaleFar: number;
    environment: string;
    dominantColor: string;
    imageWidth: number;
    imageHeight: number;
}

function orient(a: Point, b: Point, c: Point): number {
    const v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    return v === 0 ? 0 : v > 0 ? 1 : -1;
}

function segmentsIntersect(p1: Point, p2: Point, q1: Point, q2: Point): boolean {
    const o1 = orient(p1, p2, q1);
    const o2 = orient(p1, p2, q2);
    const o3 = orient(q1, q2, p1);
    const o4 = orient(q1, q2, p2);
    return o1 !== o2 && o3 !== o4 && o1 !== 0 && o2 !== 0 && o3 !== 0 && o4 !== 0;
}

/** Same constraints the generator's loader enforces; empty list means valid. */
export function validateDraft(draft: AnnotationDraft): string[] {
    const bad: string[] = [];
    if (!(draft.scaleNear > 0) || !(draft.scaleFar > 0)) {
        bad.push('scales must be positive');
    }
    if (!(draft.scaleFar < draft.scaleNear)) {
        bad.push(`scale_far (${draft.scaleFar}) must be < scale_near (${draft.scaleNear})`);
    }
    const farBottom = Math.max(draft.farLeft.y, draft.farRight.y);
    const nearTop = Math.min(draft.nearLeft.y, draft.nearRight.y);
    if (!(farBottom < nearTop)) {
        bad.push('far edge must lie strictly above near edge');
    }
    // Corner order NL -> NR -> FR -> FL; opposite sides must not cross.
    if (segmentsIntersect(draft.nearLeft, draft.nearRight, draft.farRight, draft.farLeft) ||
        segmentsIntersect(draft.nearRight, draft.farRight, draft.farLeft, draft.nearLeft)) {
        bad.push('corners form a self-intersecting quadrilateral');
    }
    return bad;
}
