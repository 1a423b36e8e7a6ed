import { Point } from './trapezoid.js';

export interface TrapezoidGeometry {
    nearLeft: Point;
    nearRight: Point;
    farLeft: Point;
    farRight: Point;
    scaleNear: number;
    scaleFar: number;
}

function lerp(a: Point, b: Point, t: number): Point {
    return { x: a.x + (b.x - a.x) * t, y: a.y + (b.y - a.y) * t };
}

/**
 * Bilinear placement: anchor is the sprite's bottom-center, u_x sweeps left
 * to right, u_z sweeps near (0) to far (1), scale interpolates linearly
 * between the near and far bases. Deliberately reimplemented here and
 * cross-checked against the generator through the shared fixture file.
 */
export function place(t: TrapezoidGeometry, uX: number, uZ: number): { anchor: Point; scale: number } {
    const near = lerp(t.nearLeft, t.nearRight, uX);
    const far = lerp(t.farLeft, t.farRight, uX);
    return {
        anchor: {
            x: (1 - uZ) * near.x + uZ * far.x,
            y: (1 - uZ) * near.y + uZ * far.y,
        },
        scale: (1 - uZ) * t.scaleNear + uZ * t.scaleFar,
    };
}

/**
 * Approximate inverse used for the live preview: recover (u_x, u_z) from a
 * cursor position (exact for horizontal near/far edges).
 */
export function cursorToUnit(t: TrapezoidGeometry, cursor: Point): { uX: number; uZ: number } {
    const nearY = (t.nearLeft.y + t.nearRight.y) / 2;
    const farY = (t.farLeft.y + t.farRight.y) / 2;
    const uZ = clamp01(nearY === farY ? 0 : (nearY - cursor.y) / (nearY - farY));
    const left = lerp(t.nearLeft, t.farLeft, uZ);
    const right = lerp(t.nearRight, t.farRight, uZ);
    const uX = clamp01(right.x === left.x ? 0 : (cursor.x - left.x) / (right.x - left.x));
    return { uX, uZ };
}

function clamp01(v: number): number {
    return Math.max(0, Math.min(1, v));
}
