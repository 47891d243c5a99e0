// Scriptable stub execution: pattern rules over the cell source decide the
// outcome, so error telemetry can be produced on demand without a kernel.
// First matching rule wins; a default success rule always exists. A real
// runner endpoint can replace this behind the same run() signature.

import { RunOutcome, StubRule } from "./types.js";

const DEFAULT_OUTPUT = "ok";

export class StubRunner {
    private readonly rules: StubRule[];
    private readonly defaultOutput: string;

    constructor(rules: StubRule[] = [], defaultOutput: string = DEFAULT_OUTPUT) {
        this.rules = rules;
        this.defaultOutput = defaultOutput;
    }

    static fromConfig(doc: unknown): StubRunner {
        const config = (doc ?? {}) as { rules?: StubRule[]; default_output?: string };
        return new StubRunner(config.rules ?? [], config.default_output ?? DEFAULT_OUTPUT);
    }

    run(source: string): RunOutcome {
        for (const rule of this.rules) {
            const hit = rule.regex
                ? new RegExp(rule.pattern).test(source)
                : source.includes(rule.pattern);
            if (hit) {
                return rule.outcome;
            }
        }
        return { success: true, output: this.defaultOutput };
    }
}
