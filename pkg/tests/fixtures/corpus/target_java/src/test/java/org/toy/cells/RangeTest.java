package org.toy.cells;

import org.toy.testing.Assert;

public class RangeTest {
    public void testWidth() {
        Assert.assertEquals(1, new Range(3, 3).width());
        Assert.assertEquals(5, new Range(2, 6).width());
    }
}
