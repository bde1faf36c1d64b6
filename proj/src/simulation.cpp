#include "convrec/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace convrec {

using nlohmann::json;

namespace {

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string current;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    lines.push_back(current);
    return lines;
}

VertexTarget::Kind expected_target_kind(Act act) {
    switch (act) {
        case Act::Greet:
        case Act::Close:
            return VertexTarget::Kind::None;
        case Act::Request:
        case Act::Inform:
        case Act::Clarify:
        case Act::RequestInfo:
            return VertexTarget::Kind::Aspect;
        case Act::Recommend:
        case Act::Accept:
        case Act::Reject:
            return VertexTarget::Kind::Item;
    }
    return VertexTarget::Kind::None;
}

std::optional<std::string> find_item_by_title(const CorpusIndex& index, const std::string& title) {
    const std::string needle = to_lower(trim(title));
    for (const std::string& id : index.item_ids()) {
        const CatalogEntry* entry = index.find_item(id);
        if (entry != nullptr && to_lower(entry->meta.title) == needle) return id;
    }
    return std::nullopt;
}

bool fail(std::string* error, const std::string& reason) {
    if (error != nullptr) *error = reason;
    return false;
}

}  // namespace

std::optional<ParsedReply> parse_act(const std::string& utterance, const AspectVocabulary& vocab,
                                     const CorpusIndex& index, std::string* error) {
    const auto set_error = [error](const std::string& reason) {
        if (error != nullptr) *error = reason;
        return std::nullopt;
    };

    std::vector<std::string> lines = split_lines(utterance);
    if (lines.empty() || lines[0].rfind("ACT ", 0) != 0) {
        return set_error("missing ACT header");
    }

    const std::string header = trim(lines[0].substr(4));
    std::vector<std::string> fields;
    std::string field;
    std::istringstream stream(header);
    while (std::getline(stream, field, '|')) fields.push_back(trim(field));
    if (fields.size() != 3) return set_error("ACT header needs Role|Act|target");

    const auto role = parse_role(fields[0]);
    if (!role) return set_error("unknown role: " + fields[0]);
    const auto act = parse_act_name(fields[1]);
    if (!act) return set_error("unknown act: " + fields[1]);

    ParsedReply reply;
    reply.role = *role;
    reply.act = *act;

    const VertexTarget::Kind kind = expected_target_kind(*act);
    if (fields[2] == "-") {
        if (kind != VertexTarget::Kind::None) {
            return set_error(std::string(act_name(*act)) + " requires a target");
        }
        reply.target = VertexTarget::none();
    } else if (kind == VertexTarget::Kind::Aspect) {
        const auto aspect = vocab.label_index(fields[2]);
        if (!aspect) return set_error("unknown aspect label: " + fields[2]);
        reply.target = VertexTarget::for_aspect(*aspect);
    } else if (kind == VertexTarget::Kind::Item) {
        const auto item = find_item_by_title(index, fields[2]);
        if (!item) return set_error("unknown item title: " + fields[2]);
        reply.target = VertexTarget::for_item(*item);
    } else {
        return set_error(std::string(act_name(*act)) + " takes no target");
    }

    std::size_t body_start = 1;
    if (lines.size() > 1 && lines[1].rfind("TAG ", 0) == 0) {
        const std::string tag_line = trim(lines[1].substr(4));
        const std::string prefix = "polarity=";
        if (tag_line.rfind(prefix, 0) != 0) return set_error("malformed TAG line");
        const std::string value = trim(tag_line.substr(prefix.size()));
        if (value != "positive" && value != "negative" && value != "mixed" &&
            value != "unknown") {
            return set_error("unknown polarity tag: " + value);
        }
        reply.polarity_tag = value;
        body_start = 2;
    }

    std::string body;
    for (std::size_t i = body_start; i < lines.size(); ++i) {
        if (!body.empty()) body += '\n';
        body += lines[i];
    }
    reply.text = trim(body);
    return reply;
}

std::string polarity_tag_for(const ItemProfile& profile, int aspect) {
    if (aspect < 0 || aspect >= profile.polarity.size() ||
        !profile.defined[static_cast<std::size_t>(aspect)]) {
        return "unknown";
    }
    const double mu = profile.polarity[aspect];
    if (mu > kMixedPolarityBand) return "positive";
    if (mu < -kMixedPolarityBand) return "negative";
    return "mixed";
}

const std::vector<std::string>& underspecification_markers() {
    static const std::vector<std::string> markers = {
        "not sure",
        "no preference",
        "don't have a preference",
        "don't know",
    };
    return markers;
}

const char* sim_status_name(SimStatus status) {
    switch (status) {
        case SimStatus::Completed: return "Completed";
        case SimStatus::DiscardedRejections: return "DiscardedRejections";
        case SimStatus::DiscardedBudget: return "DiscardedBudget";
        case SimStatus::InfrastructureFailure: return "InfrastructureFailure";
    }
    return "?";
}

std::optional<SimStatus> parse_sim_status(const std::string& text) {
    if (text == "Completed") return SimStatus::Completed;
    if (text == "DiscardedRejections") return SimStatus::DiscardedRejections;
    if (text == "DiscardedBudget") return SimStatus::DiscardedBudget;
    if (text == "InfrastructureFailure") return SimStatus::InfrastructureFailure;
    return std::nullopt;
}

// --- transcripts -------------------------------------------------------------

namespace {

json target_to_json(const VertexTarget& t) {
    switch (t.kind) {
        case VertexTarget::Kind::None: return nullptr;
        case VertexTarget::Kind::Aspect: return t.aspect;
        case VertexTarget::Kind::Item: return t.item_id;
    }
    return nullptr;
}

VertexTarget target_from_json(const json& j) {
    if (j.is_null()) return VertexTarget::none();
    if (j.is_number_integer()) return VertexTarget::for_aspect(j.get<int>());
    if (j.is_string()) return VertexTarget::for_item(j.get<std::string>());
    throw ArtifactError("transcript target must be null, integer, or string");
}

}  // namespace

std::string Transcript::to_json() const {
    json j;
    j["plan_id"] = plan_id;
    j["status"] = sim_status_name(status);
    json turns_json = json::array();
    for (const DialogTurn& t : turns) {
        json tj{{"index", t.index},
                {"speaker", role_name(t.speaker)},
                {"act", act_name(t.act)},
                {"target", target_to_json(t.target)},
                {"tag", t.polarity_tag ? json(*t.polarity_tag) : json(nullptr)},
                {"text", t.text},
                {"vertex", t.vertex_id},
                {"temperature", t.temperature},
                {"rejections", t.rejections_before}};
        turns_json.push_back(std::move(tj));
    }
    j["turns"] = std::move(turns_json);
    return j.dump();
}

Transcript Transcript::from_json(const std::string& text) {
    json j = json::parse(text);
    Transcript t;
    t.plan_id = j.at("plan_id").get<std::string>();
    const auto status = parse_sim_status(j.at("status").get<std::string>());
    if (!status) throw ArtifactError("transcript with unknown status");
    t.status = *status;
    for (const auto& tj : j.at("turns")) {
        DialogTurn turn;
        turn.index = tj.at("index").get<int>();
        const auto speaker = parse_role(tj.at("speaker").get<std::string>());
        const auto act = parse_act_name(tj.at("act").get<std::string>());
        if (!speaker || !act) throw ArtifactError("transcript turn with unknown role/act");
        turn.speaker = *speaker;
        turn.act = *act;
        turn.target = target_from_json(tj.at("target"));
        if (!tj.at("tag").is_null()) turn.polarity_tag = tj.at("tag").get<std::string>();
        turn.text = tj.at("text").get<std::string>();
        turn.vertex_id = tj.at("vertex").get<int>();
        turn.temperature = tj.at("temperature").get<double>();
        turn.rejections_before = tj.at("rejections").get<int>();
        t.turns.push_back(std::move(turn));
    }
    return t;
}

// --- grounding ------------------------------------------------------------

namespace {

// The Recommend an answer ultimately responds to: Inform -> RequestInfo ->
// Recommend along dependency edges.
std::optional<std::string> answered_item(const DialogPlan& plan, const IntentVertex& inform) {
    for (int dep : inform.depends_on) {
        const IntentVertex& ask = plan.vertex(dep);
        if (ask.act != Act::RequestInfo) continue;
        for (int dep2 : ask.depends_on) {
            const IntentVertex& rec = plan.vertex(dep2);
            if (rec.act == Act::Recommend) return rec.target.item_id;
        }
    }
    return std::nullopt;
}

int final_recommend_vertex(const DialogPlan& plan) {
    for (const IntentVertex& v : plan.vertices) {
        if (v.act == Act::Recommend && v.target.item_id == plan.item_id) return v.id;
    }
    return -1;
}

}  // namespace

std::optional<std::string> grounding_violation(const ParsedReply& reply,
                                               const IntentVertex& vertex, SimContext& ctx,
                                               const std::set<int>& executed) {
    if (vertex.role == Role::User && vertex.act == Act::Inform) {
        const int aspect = vertex.target.aspect;
        if (ctx.user_profile.weights[aspect] == 0.0) {
            const auto& markers = underspecification_markers();
            const bool hedged = std::any_of(markers.begin(), markers.end(),
                                            [&reply](const std::string& m) {
                                                return contains_ci(reply.text, m);
                                            });
            if (!hedged) {
                return "definite preference stated for an aspect with no profile weight";
            }
        }
    }

    if (vertex.role == Role::System && vertex.act == Act::Inform) {
        if (!reply.polarity_tag) return "crowd answer without a polarity tag";
        const auto item = answered_item(ctx.plan, vertex);
        if (!item) return "crowd answer without a recommendation to answer for";
        const ItemProfile& profile = ctx.item_profiles.at(*item, ctx.plan.timestamp);
        const int aspect = vertex.target.aspect;
        const std::string& tag = *reply.polarity_tag;
        if (!profile.defined[static_cast<std::size_t>(aspect)]) {
            if (tag != "unknown") return "polarity tag for an aspect with no crowd data";
        } else {
            const double mu = profile.polarity[aspect];
            const bool ok = (tag == "positive" && mu > 0.0) || (tag == "negative" && mu < 0.0) ||
                            (tag == "mixed" && std::abs(mu) <= kMixedPolarityBand);
            if (!ok) return "polarity tag contradicts crowd sentiment";
        }
    }

    if (vertex.role == Role::User) {
        const int final_rec = final_recommend_vertex(ctx.plan);
        if (final_rec >= 0 && executed.count(final_rec) == 0) {
            const CatalogEntry* truth = ctx.index.find_item(ctx.plan.item_id);
            if (truth != nullptr && contains_ci(reply.text, truth->meta.title)) {
                return "ground-truth item revealed before it was recommended";
            }
        }
    }
    return std::nullopt;
}

// --- prompts ---------------------------------------------------------------

namespace {

std::string format_weight(double w) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.6f", w);
    return buffer;
}

std::string render_target(const VertexTarget& target, const SimContext& ctx) {
    switch (target.kind) {
        case VertexTarget::Kind::None:
            return "-";
        case VertexTarget::Kind::Aspect:
            return ctx.vocab.labels[static_cast<std::size_t>(target.aspect)];
        case VertexTarget::Kind::Item: {
            const CatalogEntry* entry = ctx.index.find_item(target.item_id);
            return entry != nullptr ? entry->meta.title : target.item_id;
        }
    }
    return "-";
}

// Static role instructions. The system side sees titles only and never the
// ground-truth item id; its plan view masks the Accept target.
std::string agent_instructions(SimContext& ctx, Role role) {
    std::ostringstream out;
    if (role == Role::User) {
        const CatalogEntry* truth = ctx.index.find_item(ctx.plan.item_id);
        out << "You are simulating a shopper in a recommendation dialog.\n";
        out << "You are secretly looking for: " << (truth ? truth->meta.title : ctx.plan.item_id)
            << "\n";
        if (truth && truth->meta.category) out << "Category: " << *truth->meta.category << "\n";
        out << "Do not mention or reveal that item until the assistant recommends it.\n";
        out << "Your interests, strongest first:\n";
        std::vector<int> order;
        for (int a = 0; a < ctx.user_profile.weights.size(); ++a) {
            if (ctx.user_profile.weights[a] > 0.0) order.push_back(a);
        }
        std::sort(order.begin(), order.end(), [&ctx](int a, int b) {
            if (ctx.user_profile.weights[a] != ctx.user_profile.weights[b]) {
                return ctx.user_profile.weights[a] > ctx.user_profile.weights[b];
            }
            return a < b;
        });
        for (int a : order) {
            out << "  " << ctx.vocab.labels[static_cast<std::size_t>(a)] << " = "
                << format_weight(ctx.user_profile.weights[a]) << "\n";
        }
        if (order.empty()) out << "  (no recorded interests)\n";
        out << "If asked about an aspect not listed, say you are not sure.\n";
    } else {
        out << "You are a recommendation assistant talking to a shopper.\n";
        out << "The shopper previously interacted with:\n";
        const auto history = ctx.index.user_history(ctx.plan.user_id, ctx.plan.timestamp);
        for (const Interaction& d : history) {
            const CatalogEntry* entry = ctx.index.find_item(d.item_id);
            if (entry != nullptr) out << "  " << entry->meta.title << "\n";
        }
        if (history.empty()) out << "  (first visit)\n";
        out << "Ground every aspect answer in the CROWD tags you are given.\n";
    }
    out << "Dialog plan:\n";
    for (const IntentVertex& v : ctx.plan.vertices) {
        const bool mask = role == Role::System && v.act == Act::Accept;
        out << "  " << v.id << ": " << role_name(v.role) << "|" << act_name(v.act) << "|"
            << (mask ? std::string("-") : render_target(v.target, ctx)) << "\n";
    }
    out << "Reply format: first line `ACT <Role>|<Act>|<target or ->`";
    if (role == Role::System) {
        out << "; when answering an information request add a second line "
               "`TAG polarity=<positive|negative|mixed|unknown>`";
    }
    out << "; then your message.\n";
    out << "Pick one of the ELIGIBLE moves offered each turn.\n";
    return out.str();
}

std::string turn_message(SimContext& ctx, const std::vector<DialogTurn>& history,
                         const std::vector<const IntentVertex*>& eligible, Role speaker) {
    std::ostringstream out;
    out << "DIALOG\n";
    for (const DialogTurn& t : history) {
        out << t.index << ". " << role_name(t.speaker) << ": " << t.text << "\n";
    }
    for (const IntentVertex* v : eligible) {
        out << "ELIGIBLE " << role_name(v->role) << "|" << act_name(v->act) << "|"
            << render_target(v->target, ctx) << "\n";
    }
    if (speaker == Role::User) {
        for (const IntentVertex* v : eligible) {
            if (v->act != Act::Inform) continue;
            const int aspect = v->target.aspect;
            const double w = ctx.user_profile.weights[aspect];
            out << "PROFILE " << ctx.vocab.labels[static_cast<std::size_t>(aspect)] << "="
                << (w > 0.0 ? format_weight(w) : std::string("none")) << "\n";
        }
    } else {
        for (const IntentVertex* v : eligible) {
            if (v->act != Act::Inform) continue;
            const auto item = answered_item(ctx.plan, *v);
            if (!item) continue;
            const ItemProfile& profile = ctx.item_profiles.at(*item, ctx.plan.timestamp);
            out << "CROWD " << ctx.vocab.labels[static_cast<std::size_t>(v->target.aspect)] << "="
                << polarity_tag_for(profile, v->target.aspect) << "\n";
        }
    }
    out << "Respond with your next turn.";
    return out.str();
}

}  // namespace

SimulationOutcome run_dialog(SimContext& ctx, ChatProvider& user_agent,
                             ChatProvider& system_agent, const SimParams& params,
                             PromptLog* log) {
    SimulationOutcome out;
    out.transcript.plan_id = ctx.plan.plan_id;

    const std::string user_instructions = agent_instructions(ctx, Role::User);
    const std::string system_instructions = agent_instructions(ctx, Role::System);

    std::set<int> executed;
    std::optional<Role> previous_speaker;
    int consecutive_rejections = 0;
    const std::size_t total = ctx.plan.vertices.size();

    while (true) {
        if (executed.size() == total) {
            out.status = SimStatus::Completed;
            break;
        }
        if (static_cast<int>(out.transcript.turns.size()) >= params.max_turns) {
            out.status = SimStatus::DiscardedBudget;
            break;
        }

        const std::vector<int> frontier_ids = frontier(ctx.plan, executed);
        if (frontier_ids.empty()) {
            out.status = SimStatus::InfrastructureFailure;
            out.failure = "frontier deadlock in plan " + ctx.plan.plan_id;
            break;
        }

        int chosen = frontier_ids.front();
        if (previous_speaker) {
            for (int id : frontier_ids) {
                if (ctx.plan.vertex(id).role != *previous_speaker) {
                    chosen = id;
                    break;
                }
            }
        }
        const Role speaker = ctx.plan.vertex(chosen).role;

        std::vector<const IntentVertex*> eligible;
        for (int id : frontier_ids) {
            const IntentVertex& v = ctx.plan.vertex(id);
            if (v.role == speaker) eligible.push_back(&v);
        }

        const std::vector<ChatMessage> messages = {
            {ChatRole::System, speaker == Role::User ? user_instructions : system_instructions},
            {ChatRole::User, turn_message(ctx, out.transcript.turns, eligible, speaker)},
        };
        if (log != nullptr) {
            for (const ChatMessage& m : messages) log->messages.push_back(m.content);
        }

        ChatProvider& agent = speaker == Role::User ? user_agent : system_agent;
        double temperature = params.initial_temperature;
        bool accepted = false;
        while (!accepted) {
            std::string reply_text;
            try {
                reply_text = agent.chat_complete(messages, temperature);
            } catch (const ProviderError& e) {
                out.status = SimStatus::InfrastructureFailure;
                out.failure = e.what();
                return out;
            }

            std::string parse_error;
            const auto reply = parse_act(reply_text, ctx.vocab, ctx.index, &parse_error);

            const IntentVertex* match = nullptr;
            if (reply && reply->role == speaker) {
                for (const IntentVertex* v : eligible) {
                    if (v->act == reply->act && v->target == reply->target) {
                        match = v;
                        break;
                    }
                }
            }

            std::optional<std::string> violation;
            if (match != nullptr) {
                violation = grounding_violation(*reply, *match, ctx, executed);
            }

            if (match != nullptr && !violation) {
                DialogTurn turn;
                turn.index = static_cast<int>(out.transcript.turns.size());
                turn.speaker = speaker;
                turn.act = reply->act;
                turn.target = reply->target;
                turn.polarity_tag = reply->polarity_tag;
                turn.text = reply->text;
                turn.vertex_id = match->id;
                turn.temperature = temperature;
                turn.rejections_before = consecutive_rejections;
                out.transcript.turns.push_back(std::move(turn));
                executed.insert(match->id);
                previous_speaker = speaker;
                consecutive_rejections = 0;
                accepted = true;
            } else {
                ++consecutive_rejections;
                ++out.rejections_by_vertex[chosen];
                if (consecutive_rejections >= params.max_consecutive_rejections) {
                    out.status = SimStatus::DiscardedRejections;
                    return out;
                }
                temperature = std::max(params.temperature_floor,
                                       temperature - params.temperature_decrement);
            }
        }
    }
    return out;
}

// --- scripted agents -----------------------------------------------------------

namespace {

struct EligibleLine {
    std::string role, act, target;
};

std::vector<EligibleLine> eligible_from_prompt(const std::string& content) {
    std::vector<EligibleLine> lines;
    for (const std::string& line : split_lines(content)) {
        if (line.rfind("ELIGIBLE ", 0) != 0) continue;
        const std::string rest = line.substr(9);
        const auto first = rest.find('|');
        const auto second = rest.find('|', first + 1);
        if (first == std::string::npos || second == std::string::npos) continue;
        lines.push_back({rest.substr(0, first), rest.substr(first + 1, second - first - 1),
                         rest.substr(second + 1)});
    }
    return lines;
}

std::string prompt_lookup(const std::string& content, const std::string& prefix,
                          const std::string& key) {
    for (const std::string& line : split_lines(content)) {
        if (line.rfind(prefix + " " + key + "=", 0) == 0) {
            return line.substr(prefix.size() + 1 + key.size() + 1);
        }
    }
    return "";
}

}  // namespace

std::string CompliantAgent::chat_complete(const std::vector<ChatMessage>& messages,
                                          double /*temperature*/) {
    const std::string& content = messages.back().content;
    const auto eligible = eligible_from_prompt(content);
    if (eligible.empty()) return "ACT System|Greet|-\nHello.";
    const EligibleLine& e = eligible.front();
    const std::string header = "ACT " + e.role + "|" + e.act + "|" + e.target;

    if (e.act == "Inform" && e.role == "System") {
        std::string tag = prompt_lookup(content, "CROWD", e.target);
        if (tag.empty()) tag = "unknown";
        std::string surface;
        if (tag == "positive") surface = "People speak highly of its " + e.target + ".";
        else if (tag == "negative") surface = "Reviews are critical of its " + e.target + ".";
        else if (tag == "mixed") surface = "Opinions on its " + e.target + " are mixed.";
        else surface = "I have no reports about its " + e.target + ".";
        return header + "\nTAG polarity=" + tag + "\n" + surface;
    }
    if (e.act == "Inform") {
        const std::string weight = prompt_lookup(content, "PROFILE", e.target);
        if (weight.empty() || weight == "none") {
            return header + "\nI'm not sure about " + e.target + ".";
        }
        return header + "\nI care a lot about " + e.target + ".";
    }
    if (e.act == "Greet") return header + "\nHello! What are you shopping for today?";
    if (e.act == "Request") return header + "\nHow much do you care about " + e.target + "?";
    if (e.act == "Clarify") {
        return header + "\nCould you tell me more about what you want from " + e.target + "?";
    }
    if (e.act == "Recommend") return header + "\nI suggest " + e.target + ".";
    if (e.act == "RequestInfo") return header + "\nHow does it do on " + e.target + "?";
    if (e.act == "Accept") return header + "\nGreat, " + e.target + " sounds right for me.";
    if (e.act == "Reject") return header + "\nI do not think " + e.target + " fits me.";
    if (e.act == "Close") return header + "\nHappy to help. Enjoy!";
    return header + "\nOkay.";
}

std::string AdversarialAgent::chat_complete(const std::vector<ChatMessage>& /*messages*/,
                                            double /*temperature*/) {
    return "ACT System|Close|-\nGoodbye.";
}

}  // namespace convrec
