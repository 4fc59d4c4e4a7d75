#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "steerlab/env.hpp"
#include "steerlab/verifier.hpp"

namespace steerlab {

// Built-in task descriptions. "cup-serve" is the training-time description;
// "cup-serve-oil" is the novel description that flips which grasp region is
// acceptable without touching the environment or any model.
inline TaskSpec make_task(const std::string& id) {
    TaskSpec t;
    t.id = id;
    if (id == "cup-serve") {
        t.text = "grasp the cup from the table and serve the water to the guest";
        t.forbid = {{"first_contact_region", "interior"},
                    {"first_contact_region", "rim"},
                    {"toppled", "true"},
                    {"grasp_succeeded", "false"}};
        t.prefer = {{{"grasp_succeeded", "true"}, 1.0},
                    {{"first_contact_region", "handle"}, 1.0},
                    {{"lift_height", "high"}, 0.25}};
    } else if (id == "cup-serve-oil") {
        t.text = "grasp the cup from the table, but note that the handle is covered with oil";
        t.forbid = {{"first_contact_region", "handle"},
                    {"toppled", "true"},
                    {"grasp_succeeded", "false"}};
        t.prefer = {{{"grasp_succeeded", "true"}, 1.0},
                    {{"first_contact_region", "rim"}, 1.0},
                    {{"lift_height", "high"}, 0.25}};
    } else if (id == "bag-gentle") {
        t.text = "move the bag to the shelf without crushing its contents";
        t.forbid = {{"crush_level", "heavy"},
                    {"dropped", "true"},
                    {"grasp_succeeded", "false"}};
        t.prefer = {{{"grasp_succeeded", "true"}, 1.0},
                    {{"first_contact_region", "edge"}, 1.0}};
    } else {
        throw std::invalid_argument("unknown task id: " + id);
    }
    t.validate();
    return t;
}

inline TaskId task_family(const TaskSpec& t) {
    return t.id.rfind("bag", 0) == 0 ? TaskId::bag : TaskId::cup;
}

// Evaluation-time mode weights putting 0.7 of the probability mass on
// modes that violate the training-time task description.
inline std::vector<double> skewed_weights_for(TaskId family, const std::vector<ModeId>& hints) {
    std::vector<double> w(hints.size(), 0.0);
    if (family == TaskId::cup) {
        for (std::size_t i = 0; i < hints.size(); ++i) {
            switch (hints[i]) {
                case ModeId::handle: w[i] = 0.30; break;
                case ModeId::rim: w[i] = 0.20; break;
                case ModeId::interior: w[i] = 0.50; break;
                default: w[i] = 0.0; break;
            }
        }
    } else {
        for (std::size_t i = 0; i < hints.size(); ++i) {
            switch (hints[i]) {
                case ModeId::edge: w[i] = 0.30; break;
                case ModeId::middle: w[i] = 0.70; break;
                default: w[i] = 0.0; break;
            }
        }
    }
    return w;
}

}  // namespace steerlab
