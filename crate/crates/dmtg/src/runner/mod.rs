// experiment orchestration lands here
