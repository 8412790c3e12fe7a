/**
 * Online session counters: every typed character is an opportunity, a
 * non-empty ghost rendering marks that opportunity as shown (at most once),
 * and accepting increments the click-through numerator.
 */

export class SessionStats {
  keystrokes = 0;
  shownCount = 0;
  acceptedCount = 0;

  private shownForOpportunity = new Set<number>();

  /** Returns the new opportunity id. */
  recordKeystroke(): number {
    this.keystrokes += 1;
    return this.keystrokes;
  }

  recordShown(opportunity: number): void {
    if (opportunity > 0 && !this.shownForOpportunity.has(opportunity)) {
      this.shownForOpportunity.add(opportunity);
      this.shownCount += 1;
    }
  }

  recordAccepted(): void {
    this.acceptedCount += 1;
  }

  get surfacingRate(): number {
    return this.keystrokes === 0 ? 0 : this.shownCount / this.keystrokes;
  }

  get clickThroughRate(): number {
    return this.shownCount === 0 ? 0 : this.acceptedCount / this.shownCount;
  }
}
