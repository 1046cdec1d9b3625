import { describe, expect, it } from 'vitest';

import { controlsEnabled, initialState, renderEnabled } from '../src/types';

describe('editor state invariants', () => {
  it('controls are disabled until a plane summary exists', () => {
    const s = initialState('p1');
    expect(controlsEnabled(s)).toBe(false);
    s.plane = { normal: [0, -1, 0], anchor: [0, 1, 3], extents: [2, 1] };
    expect(controlsEnabled(s)).toBe(true);
  });

  it('render is disabled until a placement is committed', () => {
    const s = initialState('p1');
    s.plane = { normal: [0, -1, 0], anchor: [0, 1, 3], extents: [2, 1] };
    expect(renderEnabled(s)).toBe(false);
    s.placementCommitted = true;
    expect(renderEnabled(s)).toBe(true);
  });
});
