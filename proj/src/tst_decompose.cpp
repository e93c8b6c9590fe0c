#include "triepack/tst_decompose.hpp"

#include <algorithm>
#include <map>

namespace triepack {

std::vector<Subtree> decompose(const SessionTree& session) {
    const auto& msgs = session.messages();
    // Parents precede children, so one forward pass resolves every component root.
    std::vector<MessageIndex> root_of(msgs.size());
    std::map<MessageIndex, std::size_t> slot;
    std::vector<Subtree> out;
    for (MessageIndex i = 0; i < msgs.size(); ++i) {
        if (i == 0 || msgs[i].boundary != Boundary::none) {
            root_of[i] = i;
            slot[i] = out.size();
            out.push_back(Subtree{i, {}, session.session_id()});
        } else {
            root_of[i] = root_of[*session.parent_of(i)];
        }
        out[slot[root_of[i]]].messages.push_back(i);
    }
    return out;
}

namespace {

bool in_subtree(const Subtree& s, MessageIndex m) {
    return std::binary_search(s.messages.begin(), s.messages.end(), m);
}

}  // namespace

std::vector<Trajectory> subtree_trajectories(const Subtree& subtree, const SessionTree& session,
                                             const MaskPolicy& policy) {
    std::vector<Trajectory> out;
    for (MessageIndex m : subtree.messages) {
        const auto& kids = session.children(m);
        const bool leaf = std::none_of(kids.begin(), kids.end(),
                                       [&](MessageIndex c) { return in_subtree(subtree, c); });
        if (!leaf) continue;

        std::vector<MessageIndex> path{m};
        while (path.back() != subtree.root_message) path.push_back(*session.parent_of(path.back()));
        std::reverse(path.begin(), path.end());

        Trajectory t = mask_path(session, path, policy);
        t.traj_id = session.session_id() + "/" + std::to_string(subtree.root_message) + "-" + std::to_string(m);
        out.push_back(std::move(t));
    }
    return out;
}

SessionTree materialize(const Subtree& subtree, const SessionTree& session) {
    std::map<MessageIndex, MessageIndex> index;
    for (std::size_t k = 0; k < subtree.messages.size(); ++k) index[subtree.messages[k]] = k;

    std::vector<Message> msgs;
    msgs.reserve(subtree.messages.size());
    for (std::size_t k = 0; k < subtree.messages.size(); ++k) {
        Message m = session.message(subtree.messages[k]);
        if (k == 0) {
            m.boundary = Boundary::none;
            m.parent.reset();
        } else {
            m.parent = index.at(*session.parent_of(subtree.messages[k]));
        }
        msgs.push_back(std::move(m));
    }
    return SessionTree(session.session_id() + "/" + std::to_string(subtree.root_message), std::move(msgs));
}

}  // namespace triepack
