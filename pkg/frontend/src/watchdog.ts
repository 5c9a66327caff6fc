/**
 * Raises the "disconnected" banner when the stream goes quiet. Any message
 * (sample or server ping) kicks the timer; the banner must show within the
 * configured silence window.
 */
export class ConnectionWatchdog {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private silent = true;

  constructor(
    private readonly timeoutMs: number,
    private readonly onSilent: () => void,
    private readonly onAlive: () => void,
  ) {}

  kick(): void {
    if (this.silent) {
      this.silent = false;
      this.onAlive();
    }
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.silent = true;
      this.onSilent();
    }, this.timeoutMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }
}
