package org.toy.cells;

public class Range {
    private final int start;
    private final int end;

    public Range(int start, int end) {
        this.start = start;
        this.end = end;
    }

    public int width() {
        return end - start + 1;
    }
}
