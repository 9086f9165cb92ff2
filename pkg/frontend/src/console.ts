#!/usr/bin/env node
/**
 * Interactive operator console.
 *
 * Usage:
 *   callscope-console --server http://127.0.0.1:8077 --session demo --backend oracle
 *   callscope-console --server ... --session demo --backend oracle --replay corpus.jsonl [--auto]
 *
 * In manual mode, type turns as `a: <text>` (agent) or `c: <text>` (customer).
 * Commands: :step (replay one turn), :auto (replay to end), :finalize, :state,
 * :quit. Every displayed value is a server payload field; the console holds
 * no business logic of its own.
 */

import * as readline from "node:readline";

import { ApiClient } from "./client.js";
import {
  annotationChips,
  renderChips,
  renderSlotPanel,
  renderStageTracker,
  renderSummary,
  renderTimelineEntry,
  slotPanel,
  stageTracker,
  summaryView,
} from "./panels.js";
import { ReplayController, loadTranscript } from "./replay.js";
import { ConsoleSession } from "./session.js";
import type { CallRecordPayload, SpeakerRole, StoreEventPayload } from "./types.js";

interface Options {
  server: string;
  session: string;
  backend: string;
  replay?: string;
  auto: boolean;
  token?: string;
}

function parseArgs(argv: string[]): Options {
  const options: Options = {
    server: "http://127.0.0.1:8077",
    session: `console-${Date.now()}`,
    backend: "oracle",
    auto: false,
  };
  for (let i = 0; i < argv.length; i += 1) {
    const arg = argv[i];
    if (arg === "--server") options.server = argv[++i];
    else if (arg === "--session") options.session = argv[++i];
    else if (arg === "--backend") options.backend = argv[++i];
    else if (arg === "--replay") options.replay = argv[++i];
    else if (arg === "--token") options.token = argv[++i];
    else if (arg === "--auto") options.auto = true;
    else {
      console.error(`unknown argument ${arg}`);
      process.exit(2);
    }
  }
  return options;
}

function redraw(session: ConsoleSession): void {
  const latest = session.latestAnnotation();
  console.log("");
  for (const entry of session.timeline.slice(-3)) {
    console.log(renderTimelineEntry(entry));
  }
  console.log(`stage  ${renderStageTracker(stageTracker(latest ? latest.call_stage : null))}`);
  if (latest) console.log(`chips  ${renderChips(annotationChips(latest))}`);
  console.log("slots");
  console.log(renderSlotPanel(slotPanel(session.confirmedAnnotations())));
  if (session.record?.escalation_flag) console.log("!! ESCALATION FLAGGED !!");
}

async function main(): Promise<void> {
  const options = parseArgs(process.argv.slice(2));
  const client = new ApiClient(options.server, options.token);

  try {
    await client.health();
  } catch (error) {
    console.error(`cannot reach server at ${options.server}: ${error}`);
    process.exit(1);
  }

  const state = await client.createSession(options.session, options.backend);
  const session = new ConsoleSession(options.session);
  session.connection = "connecting";

  const stream = client.openStream(
    options.session,
    0,
    (event: StoreEventPayload) => {
      const applied = session.apply(event);
      if (applied > 0) redraw(session);
      if (session.finalized && session.record) {
        console.log("\n=== call summary ===");
        console.log(renderSummary(summaryView(session.record)));
        rl.close();
      }
    },
    (error) => {
      session.connection = "error";
      console.error(`stream error: ${error}`);
    },
  );
  session.connection = "live";
  console.log(
    `connected to ${options.server} session=${options.session} backend=${state.backend} ` +
      `(${state.turns.length} existing turns)`,
  );

  let replay: ReplayController | null = null;
  if (options.replay) {
    const conversations = loadTranscript(options.replay);
    if (conversations.length === 0) {
      console.error("replay file holds no conversations");
      process.exit(1);
    }
    replay = new ReplayController(client, options.session, conversations[0]);
    console.log(
      `replay loaded: ${conversations[0].conversation_id} ` +
        `(${conversations[0].turns.length} turns); :step or :auto to drive`,
    );
  }

  const rl = readline.createInterface({ input: process.stdin, output: process.stdout });
  rl.setPrompt("> ");

  const submit = async (speaker: SpeakerRole, text: string) => {
    if (session.finalized) {
      console.log("session is finalized; submission disabled");
      return;
    }
    session.markPending(text);
    console.log(`(pending) ${speaker}: ${text}`);
    await client.pushTurn(options.session, speaker, text);
  };

  const finishUp = async () => {
    try {
      const record: CallRecordPayload = await client.finalize(options.session);
      void record; // summary arrives via the stream's record-finalized event
    } catch (error) {
      console.error(`finalize failed: ${error}`);
    }
  };

  if (options.auto && replay) {
    await replay.runToEnd();
    await finishUp();
    await stream.done;
    return;
  }

  rl.prompt();
  rl.on("line", (line) => {
    void (async () => {
      const input = line.trim();
      try {
        if (input === ":quit") rl.close();
        else if (input === ":finalize") await finishUp();
        else if (input === ":state") {
          const remote = await client.getSession(options.session);
          console.log(JSON.stringify(remote, null, 2));
        } else if (input === ":step" && replay) {
          if (replay.finished) console.log("replay finished; :finalize to wrap up");
          else {
            const turn = replay.conversation.turns[replay.position];
            session.markPending(turn.text);
            await replay.step();
          }
        } else if (input === ":auto" && replay) {
          await replay.runToEnd();
          console.log("replay finished; :finalize to wrap up");
        } else if (input.startsWith("a: ")) await submit("agent", input.slice(3));
        else if (input.startsWith("c: ")) await submit("customer", input.slice(3));
        else if (input.length > 0) console.log("a: <text> | c: <text> | :step :auto :finalize :state :quit");
      } catch (error) {
        console.error(String(error));
      }
      rl.prompt();
    })();
  });

  await new Promise<void>((resolve) => rl.on("close", resolve));
  stream.close();
}

main().catch((error) => {
  console.error(error);
  process.exit(1);
});
